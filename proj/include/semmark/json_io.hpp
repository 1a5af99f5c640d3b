#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <json.hpp>

namespace semmark {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty = 0);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Pretty-printed, trailing newline. Throws Io on failure.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace semmark
