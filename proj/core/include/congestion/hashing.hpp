#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace congestion {

// 64-bit FNV-1a. Stable across platforms; used for fingerprints and manifests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

// Hex FNV-1a digest of a file's bytes. Throws DataError when unreadable.
std::string file_digest(const std::filesystem::path& path);

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Named per-stage seed derivation: derive_seed(global, "automl/trial/3").
std::uint64_t derive_seed(std::uint64_t base, std::string_view name);

}  // namespace congestion
