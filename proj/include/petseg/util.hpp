#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace petseg {

// Writes to <path>.tmp and renames over <path>.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(std::span<const float> values, std::uint64_t seed = 14695981039346656037ull);

// Runs fn(i, worker) for i in [0, n) on up to `workers` threads. The first
// exception thrown is rethrown after all threads finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t, int)>& fn);

}  // namespace petseg
