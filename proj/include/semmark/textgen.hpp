#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace semmark {

/// Unique, grammatical-looking sentences from a small template grammar with
/// Zipf-weighted word choice. Stands in for a natural-language corpus in
/// desk-scale experiments.
std::vector<std::string> generate_sentences(std::size_t n, std::uint64_t seed);

/// Every word the generator can emit (sorted, unique).
const std::vector<std::string>& generator_vocabulary();

}  // namespace semmark
