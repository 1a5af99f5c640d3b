#include "semmark/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semmark/error.hpp"
#include "semmark/json_io.hpp"
#include "semmark/rng.hpp"

namespace semmark {

using json = nlohmann::json;

namespace {

void append_row_major(const Eigen::MatrixXd& m, Eigen::VectorXd& out, Eigen::Index& pos) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(pos++) = m(r, c);
}

void append_vector(const Eigen::VectorXd& v, Eigen::VectorXd& out, Eigen::Index& pos) {
  out.segment(pos, v.size()) = v;
  pos += v.size();
}

void read_row_major(Eigen::MatrixXd& m, const Eigen::VectorXd& in, Eigen::Index& pos) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in(pos++);
}

void read_vector(Eigen::VectorXd& v, const Eigen::VectorXd& in, Eigen::Index& pos) {
  v = in.segment(pos, v.size());
  pos += v.size();
}

double sign(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Columns of `x` scaled to unit length; norms returned through `norms`.
Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& x, Eigen::VectorXd& norms) {
  norms = x.colwise().norm().transpose();
  Eigen::MatrixXd out = x;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw Error(ErrorCode::ZeroVector, "zero or non-finite vector in mapper loss (column " + std::to_string(i) + ")");
    }
    out.col(i) /= norms(i);
  }
  return out;
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // block inputs, d x n
  std::vector<Eigen::MatrixXd> acts;    // tanh activations, d x n
  Eigen::MatrixXd last;                 // input to the final layer
  Eigen::MatrixXd out;
};

// Columns are samples.
ForwardCache forward_cols(const MapperModel& m, const Eigen::MatrixXd& x) {
  ForwardCache cache;
  Eigen::MatrixXd h = x;
  for (const auto& b : m.blocks) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd a = ((b.w1 * h).colwise() + b.b1).array().tanh().matrix();
    h = h + ((b.w2 * a).colwise() + b.b2);
    cache.acts.push_back(std::move(a));
  }
  cache.last = h;
  cache.out = (m.final_w * h).colwise() + m.final_b;
  return cache;
}

Eigen::MatrixXd forward_only(const MapperModel& m, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd h = x;
  for (const auto& b : m.blocks) h = h + ((b.w2 * ((b.w1 * h).colwise() + b.b1).array().tanh().matrix()).colwise() + b.b2);
  return (m.final_w * h).colwise() + m.final_b;
}

void check_batch(const MapperModel& m, const Eigen::MatrixXd& batch) {
  if (static_cast<std::size_t>(batch.cols()) != m.dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "batch width " + std::to_string(batch.cols()) + " vs mapper dim " + std::to_string(m.dim()));
  }
}

struct LossParts {
  double consistency = 0.0;
  double similarity = 0.0;
  Eigen::MatrixXd grad_out;  // d x n, only when requested
};

// e: d x n inputs, o: d x n outputs.
LossParts evaluate_losses(const Eigen::MatrixXd& e, const Eigen::MatrixXd& o, double tau, double xbar, double eta,
                          double lambda, bool with_consistency, bool with_similarity, bool want_grad) {
  const Eigen::Index n = e.cols();
  Eigen::VectorXd e_norm, o_norm;
  const Eigen::MatrixXd en = normalize_columns(e, e_norm);
  const Eigen::MatrixXd on = normalize_columns(o, o_norm);

  LossParts parts;
  Eigen::MatrixXd g_on;
  if (want_grad) g_on = Eigen::MatrixXd::Zero(o.rows(), n);

  if (with_consistency) {
    const Eigen::MatrixXd cin = en.transpose() * en;
    const Eigen::MatrixXd cout = on.transpose() * on;
    const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double target = std::clamp(phi(std::clamp(cin(i, j), -1.0, 1.0), tau, xbar), -1.0, 1.0);
        const double diff = target - cout(i, j);
        sum += std::abs(diff);
        g(i, j) = g(j, i) = -sign(diff) / pairs;
      }
    }
    parts.consistency = sum / pairs;
    if (want_grad) g_on += on * g;
  }

  if (with_similarity) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double c = en.col(i).dot(on.col(i));
      const double diff = eta - c;
      sum += std::abs(diff);
      if (want_grad) g_on.col(i) += (-lambda * sign(diff) / static_cast<double>(n)) * en.col(i);
    }
    parts.similarity = sum / static_cast<double>(n);
  }

  if (want_grad) {
    parts.grad_out.resize(o.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto gi = g_on.col(i);
      const auto ui = on.col(i);
      parts.grad_out.col(i) = (gi - ui * ui.dot(gi)) / o_norm(i);
    }
  }
  return parts;
}

}  // namespace

std::size_t MapperModel::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& b : blocks) n += static_cast<std::size_t>(b.w1.size() + b.b1.size() + b.w2.size() + b.b2.size());
  return n + static_cast<std::size_t>(final_w.size() + final_b.size());
}

Eigen::VectorXd MapperModel::flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  for (const auto& b : blocks) {
    append_row_major(b.w1, out, pos);
    append_vector(b.b1, out, pos);
    append_row_major(b.w2, out, pos);
    append_vector(b.b2, out, pos);
  }
  append_row_major(final_w, out, pos);
  append_vector(final_b, out, pos);
  return out;
}

void MapperModel::unflatten(const Eigen::VectorXd& params) {
  if (static_cast<std::size_t>(params.size()) != parameter_count()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter vector has the wrong length");
  }
  Eigen::Index pos = 0;
  for (auto& b : blocks) {
    read_row_major(b.w1, params, pos);
    read_vector(b.b1, params, pos);
    read_row_major(b.w2, params, pos);
    read_vector(b.b2, params, pos);
  }
  read_row_major(final_w, params, pos);
  read_vector(final_b, params, pos);
}

bool MapperModel::all_finite() const {
  for (const auto& b : blocks)
    if (!b.w1.allFinite() || !b.b1.allFinite() || !b.w2.allFinite() || !b.b2.allFinite()) return false;
  return final_w.allFinite() && final_b.allFinite();
}

MapperModel identity_mapper(std::size_t dim, std::size_t blocks) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "mapper dimension must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  MapperModel m;
  for (std::size_t i = 0; i < blocks; ++i) {
    m.blocks.push_back({Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d),
                        Eigen::VectorXd::Zero(d)});
  }
  m.final_w = Eigen::MatrixXd::Identity(d, d);
  m.final_b = Eigen::VectorXd::Zero(d);
  return m;
}

MapperModel init_mapper(std::size_t dim, double eta, std::uint64_t seed, std::size_t blocks) {
  if (!(eta > 0.0 && eta < 1.0)) throw Error(ErrorCode::InvalidArgument, "eta must be in (0, 1)");
  MapperModel m = identity_mapper(dim, blocks);
  const auto d = static_cast<Eigen::Index>(dim);
  Rng rng(derive_seed(seed, "mapper/init"));
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& b : m.blocks)
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) b.w1(r, c) = w1_scale * rng.normal();

  // J = Q B Q^T with B block-diagonal rotations by 90 degrees; for odd d the
  // last direction is left fixed.
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index k = 0; k + 1 < d; k += 2) {
    b(k, k + 1) = 1.0;
    b(k + 1, k) = -1.0;
  }
  const Eigen::MatrixXd j = q * b * q.transpose();
  m.final_w = eta * Eigen::MatrixXd::Identity(d, d) + std::sqrt(1.0 - eta * eta) * j;
  return m;
}

MapperModel random_mapper(std::size_t dim, std::uint64_t seed, double scale, std::size_t blocks) {
  MapperModel m = identity_mapper(dim, blocks);
  Rng rng(derive_seed(seed, "mapper/random"));
  const double s = scale / std::sqrt(static_cast<double>(dim));
  Eigen::VectorXd p(static_cast<Eigen::Index>(m.parameter_count()));
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = s * rng.normal();
  m.unflatten(p);
  return m;
}

std::vector<double> mapper_forward(const MapperModel& m, std::span<const double> e) {
  if (e.size() != m.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "input dim " + std::to_string(e.size()) + " vs mapper dim " + std::to_string(m.dim()));
  }
  Eigen::Map<const Eigen::VectorXd> x(e.data(), static_cast<Eigen::Index>(e.size()));
  Eigen::VectorXd h = x;
  for (const auto& b : m.blocks) h = h + b.w2 * (b.w1 * h + b.b1).array().tanh().matrix() + b.b2;
  Eigen::VectorXd out = m.final_w * h + m.final_b;
  return {out.data(), out.data() + out.size()};
}

std::vector<double> mapper_forward(const MapperModel& m, std::span<const float> e) {
  std::vector<double> x(e.begin(), e.end());
  return mapper_forward(m, std::span<const double>(x));
}

Eigen::MatrixXd mapper_forward_batch(const MapperModel& m, const Eigen::MatrixXd& x) {
  check_batch(m, x);
  return forward_only(m, x.transpose()).transpose();
}

void MapperTrainConfig::validate() const {
  if (!(eta > 0.0 && eta < 1.0)) throw Error(ErrorCode::InvalidArgument, "eta must be in (0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::InvalidArgument, "lr must be > 0");
  if (!std::isfinite(tau)) throw Error(ErrorCode::InvalidArgument, "tau must be finite");
  if (batch < 2) throw Error(ErrorCode::BatchTooSmall, "batch must be >= 2");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorCode::InvalidArgument, "Adam betas must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  if (xbar_pairs == 0) throw Error(ErrorCode::InvalidArgument, "xbar_pairs must be positive");
}

json MapperTrainConfig::to_json() const {
  return {{"tau", tau},     {"eta", eta},     {"lambda", lambda},       {"lr", lr},
          {"epochs", epochs}, {"batch", batch}, {"seed", seed},           {"beta1", beta1},
          {"beta2", beta2}, {"adam_eps", adam_eps}, {"weight_decay", weight_decay}, {"blocks", blocks},
          {"xbar_pairs", xbar_pairs}};
}

MapperTrainConfig MapperTrainConfig::from_json(const json& j) {
  MapperTrainConfig c;
  c.tau = j.value("tau", c.tau);
  c.eta = j.value("eta", c.eta);
  c.lambda = j.value("lambda", c.lambda);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.blocks = j.value("blocks", c.blocks);
  c.xbar_pairs = j.value("xbar_pairs", c.xbar_pairs);
  return c;
}

double phi(double x, double tau, double xbar) noexcept { return x + tau * (x - xbar); }

double consistency_loss(const MapperModel& m, const Eigen::MatrixXd& batch, double tau, double xbar) {
  check_batch(m, batch);
  if (batch.rows() < 2) throw Error(ErrorCode::BatchTooSmall, "consistency loss needs at least 2 embeddings");
  const Eigen::MatrixXd e = batch.transpose();
  return evaluate_losses(e, forward_only(m, e), tau, xbar, 0.0, 0.0, true, false, false).consistency;
}

double similarity_loss(const MapperModel& m, const Eigen::MatrixXd& batch, double eta) {
  check_batch(m, batch);
  if (batch.rows() < 1) throw Error(ErrorCode::BatchTooSmall, "similarity loss needs a nonempty batch");
  const Eigen::MatrixXd e = batch.transpose();
  return evaluate_losses(e, forward_only(m, e), 0.0, 0.0, eta, 0.0, false, true, false).similarity;
}

double total_loss(const MapperModel& m, const Eigen::MatrixXd& batch, const MapperTrainConfig& cfg, double xbar) {
  check_batch(m, batch);
  if (batch.rows() < 2) throw Error(ErrorCode::BatchTooSmall, "total loss needs at least 2 embeddings");
  const Eigen::MatrixXd e = batch.transpose();
  auto parts = evaluate_losses(e, forward_only(m, e), cfg.tau, xbar, cfg.eta, cfg.lambda, true, true, false);
  return parts.consistency + cfg.lambda * parts.similarity;
}

LossAndGradient loss_and_gradient(const MapperModel& m, const Eigen::MatrixXd& batch, const MapperTrainConfig& cfg,
                                  double xbar) {
  check_batch(m, batch);
  if (batch.rows() < 2) throw Error(ErrorCode::BatchTooSmall, "gradient needs at least 2 embeddings");
  const Eigen::MatrixXd e = batch.transpose();
  const ForwardCache cache = forward_cols(m, e);
  LossParts parts = evaluate_losses(e, cache.out, cfg.tau, xbar, cfg.eta, cfg.lambda, true, true, true);

  MapperModel grad = m;
  const Eigen::MatrixXd& d_out = parts.grad_out;
  grad.final_w = d_out * cache.last.transpose();
  grad.final_b = d_out.rowwise().sum();
  Eigen::MatrixXd d_h = m.final_w.transpose() * d_out;
  for (std::size_t k = m.blocks.size(); k-- > 0;) {
    const auto& b = m.blocks[k];
    const Eigen::MatrixXd& a = cache.acts[k];
    auto& gb = grad.blocks[k];
    gb.w2 = d_h * a.transpose();
    gb.b2 = d_h.rowwise().sum();
    const Eigen::MatrixXd d_pre = ((b.w2.transpose() * d_h).array() * (1.0 - a.array().square())).matrix();
    gb.w1 = d_pre * cache.inputs[k].transpose();
    gb.b1 = d_pre.rowwise().sum();
    d_h += b.w1.transpose() * d_pre;
  }

  LossAndGradient out;
  out.consistency = parts.consistency;
  out.similarity = parts.similarity;
  out.loss = parts.consistency + cfg.lambda * parts.similarity;
  out.gradient = grad.flatten();
  return out;
}

double check_gradients(const MapperModel& m, const Eigen::MatrixXd& batch, const MapperTrainConfig& cfg, double xbar,
                       double eps, double floor) {
  if (m.parameter_count() == 0) return 0.0;
  const Eigen::VectorXd analytic = loss_and_gradient(m, batch, cfg, xbar).gradient;
  const Eigen::VectorXd base = m.flatten();
  MapperModel probe = m;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Eigen::VectorXd p = base;
    p(i) = base(i) + eps;
    probe.unflatten(p);
    const double up = total_loss(probe, batch, cfg, xbar);
    p(i) = base(i) - eps;
    probe.unflatten(p);
    const double down = total_loss(probe, batch, cfg, xbar);
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic(i) - numeric) / denom);
  }
  return worst;
}

double estimate_mean_cosine(const DenseMatrix& data, std::size_t pairs, std::uint64_t seed) {
  if (data.rows() < 2) throw Error(ErrorCode::InsufficientSamples, "need at least 2 embeddings for pair statistics");
  Rng rng(seed);
  double sum = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto i = static_cast<std::size_t>(rng.below(data.rows()));
    auto j = static_cast<std::size_t>(rng.below(data.rows() - 1));
    if (j >= i) ++j;
    sum += cosine(data.row(i), data.row(j));
  }
  return sum / static_cast<double>(pairs);
}

MapperTrainResult train_mapper(const Corpus& corpus, const MapperTrainConfig& cfg) {
  cfg.validate();
  if (corpus.size() < 2 * cfg.batch) {
    throw Error(ErrorCode::CorpusTooSmall, "mapper training needs >= 2*batch = " + std::to_string(2 * cfg.batch) +
                                               " embeddings, got " + std::to_string(corpus.size()));
  }
  const DenseMatrix data = corpus.matrix();
  const Eigen::MatrixXd all = data.to_eigen();

  MapperTrainResult result;
  result.xbar = estimate_mean_cosine(data, cfg.xbar_pairs, derive_seed(cfg.seed, "mapper/xbar"));
  result.model = init_mapper(corpus.dim(), cfg.eta, cfg.seed, cfg.blocks);

  Eigen::VectorXd params = result.model.flatten();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(params.size());
  Rng shuffle_rng(derive_seed(cfg.seed, "mapper/shuffle"));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n_batches = corpus.size() / cfg.batch;
  Eigen::MatrixXd batch(static_cast<Eigen::Index>(cfg.batch), all.cols());
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      for (std::size_t r = 0; r < cfg.batch; ++r) {
        batch.row(static_cast<Eigen::Index>(r)) = all.row(static_cast<Eigen::Index>(order[b * cfg.batch + r]));
      }
      LossAndGradient lg;
      try {
        lg = loss_and_gradient(result.model, batch, cfg, result.xbar);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ZeroVector) throw;
        throw Error(ErrorCode::DivergedLoss, std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
        throw Error(ErrorCode::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      epoch_sum += lg.loss;

      ++step;
      params *= 1.0 - cfg.lr * cfg.weight_decay;
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * lg.gradient;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * lg.gradient.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      params.array() -= cfg.lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
      result.model.unflatten(params);
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(n_batches));
  }
  if (!result.model.all_finite()) throw Error(ErrorCode::DivergedLoss, "non-finite mapper weights after training");
  return result;
}

json mapper_to_json(const MapperModel& m, const json& training) {
  json j;
  j["format"] = "semmark-mapper";
  j["version"] = 1;
  j["dim"] = m.dim();
  j["activation"] = "tanh";
  j["blocks"] = json::array();
  for (const auto& b : m.blocks) {
    j["blocks"].push_back({{"w1", matrix_to_json(b.w1)},
                           {"b1", vector_to_json(b.b1)},
                           {"w2", matrix_to_json(b.w2)},
                           {"b2", vector_to_json(b.b2)}});
  }
  j["final"] = {{"w", matrix_to_json(m.final_w)}, {"b", vector_to_json(m.final_b)}};
  if (!training.is_null()) j["training"] = training;
  return j;
}

MapperModel mapper_from_json(const json& j) {
  try {
    if (j.value("activation", std::string("tanh")) != "tanh") throw Error(ErrorCode::ParseError, "unsupported activation");
    const auto d = static_cast<Eigen::Index>(j.at("dim").get<std::size_t>());
    auto check = [d](const Eigen::MatrixXd& m, Eigen::Index cols, const char* what) {
      if (m.rows() != d || m.cols() != cols) throw Error(ErrorCode::ParseError, std::string("mapper.json: bad shape for ") + what);
    };
    MapperModel m;
    for (const auto& jb : j.at("blocks")) {
      ResidualBlock b{matrix_from_json(jb.at("w1")), vector_from_json(jb.at("b1")), matrix_from_json(jb.at("w2")),
                      vector_from_json(jb.at("b2"))};
      check(b.w1, d, "w1");
      check(b.w2, d, "w2");
      check(b.b1, 1, "b1");
      check(b.b2, 1, "b2");
      m.blocks.push_back(std::move(b));
    }
    m.final_w = matrix_from_json(j.at("final").at("w"));
    m.final_b = vector_from_json(j.at("final").at("b"));
    check(m.final_w, d, "final.w");
    check(m.final_b, 1, "final.b");
    if (!m.all_finite()) throw Error(ErrorCode::NonFinite, "mapper.json contains non-finite weights");
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("mapper.json: ") + e.what());
  }
}

}  // namespace semmark
