#include "semmark/textgen.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <string_view>
#include <unordered_set>

#include "semmark/rng.hpp"

namespace semmark {

namespace {

using WordList = std::vector<std::string_view>;

const WordList kDeterminers = {"the", "a", "this", "every", "our", "their"};
const WordList kAdjectives = {"quiet",   "bright",  "old",      "new",     "careful", "rapid",   "small",  "large",
                              "strange", "modern",  "ancient",  "gentle",  "heavy",   "simple",  "complex", "remote",
                              "local",   "hidden",  "public",   "private", "curious", "ordinary", "rare",   "common",
                              "early",   "late",    "bold",     "calm",    "distant", "honest",  "famous", "fragile",
                              "golden",  "silent",  "crowded",  "narrow",  "vivid",   "steady",  "frozen", "humble"};
const WordList kNouns = {"teacher",  "river",    "market",  "garden",   "engineer", "village", "report",   "story",
                         "machine",  "doctor",   "forest",  "letter",   "city",     "student", "painter",  "bridge",
                         "kitchen",  "museum",   "farmer",  "library",  "station",  "window",  "artist",   "storm",
                         "mountain", "harbor",   "lawyer",  "festival", "council",  "bakery",  "planet",   "island",
                         "pilot",    "theater",  "journal", "company",  "orchard",  "singer",  "castle",   "valley",
                         "camera",   "network",  "recipe",  "lecture",  "hospital", "nurse",   "musician", "desert",
                         "coach",    "election", "novel",   "factory",  "gallery",  "ocean",   "scholar",  "tower",
                         "courier",  "meadow",   "captain", "archive"};
const WordList kVerbs = {"visits",   "describes", "builds",    "repairs",  "watches",   "admires",    "questions",
                         "follows",  "paints",    "explores",  "reviews",  "celebrates", "discovers", "protects",
                         "ignores",  "remembers", "supports",  "finds",    "leaves",    "changes",    "studies",
                         "greets",   "imagines",  "carries",   "crosses",  "measures",  "photographs", "defends",
                         "praises",  "chooses",   "shares",    "opens",    "closes",    "guides",     "tests",
                         "welcomes", "answers",   "maps",      "restores", "announces"};
const WordList kAdverbs = {"slowly",   "quickly", "often",  "rarely",     "carefully", "happily",  "quietly",
                           "suddenly", "proudly", "gently", "eventually", "warmly",    "patiently", "boldly",
                           "openly",   "calmly",  "briefly", "politely",  "loudly",    "freely"};
const WordList kPrepositions = {"near", "beyond", "inside", "behind", "across", "under", "beside", "around", "toward", "within"};
const WordList kConnectors = {"while", "because", "after", "before", "although", "when"};

// Zipf-like rank weights (1/(r+1)) keep function words and early list entries frequent.
std::string_view pick(const WordList& words, Rng& rng) {
  double total = 0.0;
  for (std::size_t r = 0; r < words.size(); ++r) total += 1.0 / static_cast<double>(r + 1);
  double u = rng.uniform() * total;
  for (std::size_t r = 0; r < words.size(); ++r) {
    u -= 1.0 / static_cast<double>(r + 1);
    if (u <= 0.0) return words[r];
  }
  return words.back();
}

enum class Slot { Det, Adj, Noun, Verb, Adv, Prep, Conn };

const std::vector<std::vector<Slot>> kTemplates = {
    {Slot::Det, Slot::Adj, Slot::Noun, Slot::Verb, Slot::Det, Slot::Noun},
    {Slot::Det, Slot::Noun, Slot::Adv, Slot::Verb, Slot::Det, Slot::Adj, Slot::Noun},
    {Slot::Det, Slot::Adj, Slot::Noun, Slot::Verb, Slot::Det, Slot::Noun, Slot::Prep, Slot::Det, Slot::Noun},
    {Slot::Det, Slot::Noun, Slot::Verb, Slot::Det, Slot::Adj, Slot::Noun, Slot::Adv},
    {Slot::Det, Slot::Noun, Slot::Prep, Slot::Det, Slot::Noun, Slot::Verb, Slot::Det, Slot::Adj, Slot::Noun},
    {Slot::Det, Slot::Adj, Slot::Noun, Slot::Verb, Slot::Det, Slot::Noun, Slot::Conn, Slot::Det, Slot::Noun, Slot::Verb,
     Slot::Det, Slot::Noun},
    {Slot::Det, Slot::Noun, Slot::Adv, Slot::Verb, Slot::Det, Slot::Noun, Slot::Prep, Slot::Det, Slot::Adj, Slot::Noun},
};

const WordList& words_for(Slot s) {
  switch (s) {
    case Slot::Det: return kDeterminers;
    case Slot::Adj: return kAdjectives;
    case Slot::Noun: return kNouns;
    case Slot::Verb: return kVerbs;
    case Slot::Adv: return kAdverbs;
    case Slot::Prep: return kPrepositions;
    case Slot::Conn: return kConnectors;
  }
  return kNouns;
}

}  // namespace

std::vector<std::string> generate_sentences(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "textgen"));
  std::vector<std::string> out;
  out.reserve(n);
  std::unordered_set<std::string> seen;
  while (out.size() < n) {
    const auto& tmpl = kTemplates[static_cast<std::size_t>(rng.below(kTemplates.size()))];
    std::string s;
    for (Slot slot : tmpl) {
      if (!s.empty()) s += ' ';
      s += pick(words_for(slot), rng);
    }
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

const std::vector<std::string>& generator_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::set<std::string> all;
    for (const auto* list : {&kDeterminers, &kAdjectives, &kNouns, &kVerbs, &kAdverbs, &kPrepositions, &kConnectors})
      for (auto w : *list) all.emplace(w);
    return std::vector<std::string>(all.begin(), all.end());
  }();
  return vocab;
}

}  // namespace semmark
