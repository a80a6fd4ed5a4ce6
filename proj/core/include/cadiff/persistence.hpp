#pragma once

// File formats.
//
// Dataset: JSON lines, one record per line:
//   {"kind", "params": {"goals", "obstacle_centers", "obstacle_radii"},
//    "x_star", "objective", "violation", "source_seed"}
//   x_star holds the normalized decision vector.
//
// Samples: JSON lines {"instance", "sample", "kind", "params", "x", "violation"}.
//
// GT table: CSV `k,mean,std,ci95_lo,ci95_hi` plus `<csv>.json` with
//   {kind, K, beta_start, beta_end, N, M, seed, epsilon_floor}.
//
// Checkpoint (little endian):
//   "CADIFFCK" u32 version u32 kind u32 profile u32 mode u32 K
//   f64 beta_start f64 beta_end u64 seed f64 lambda
//   u32 time_embed_dim u32 n_enc u32[n_enc] u32 n_trunk u32[n_trunk]
//   u32 n_tensors, then per tensor: u32 name_len, name, u32 rows, u32 cols,
//   f32[rows * cols] column-major.
//   plus `<checkpoint>.json` duplicating the header.
//
// Doubles are written with 17 significant digits.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cadiff/constraint_align.hpp"
#include "cadiff/denoiser.hpp"
#include "cadiff/diffusion.hpp"
#include "cadiff/nlp_solver.hpp"

namespace cadiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::filesystem::path sidecar_path(const std::filesystem::path& file);

void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path);

/// One generated candidate: instance index, sample index within the instance,
/// the instance parameters, the normalized sample and its violation.
struct SampleRecord {
  int instance = 0;
  int sample = 0;
  ProblemParams params;
  DecisionVector x;
  double violation = 0.0;
};

void save_samples(const std::vector<SampleRecord>& samples, const std::filesystem::path& path);
std::vector<SampleRecord> load_samples(const std::filesystem::path& path);

void save_gt_table(const GtViolationTable& table, const std::filesystem::path& csv_path);
GtViolationTable load_gt_table(const std::filesystem::path& csv_path);

struct CheckpointHeader {
  ProblemKind kind = ProblemKind::Tabletop;
  DenoiserArchitecture architecture;
  TrainMode mode = TrainMode::Vanilla;
  int K = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
};

struct Checkpoint {
  CheckpointHeader header;
  Denoiser model;
  NoiseSchedule schedule;
};

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model, const NoiseSchedule& sched,
                     std::uint64_t seed, TrainMode mode, double lambda);

/// Throws IncompatibleFileError on bad magic/version, truncation or shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a file's bytes or of a string.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view data);

}  // namespace cadiff
