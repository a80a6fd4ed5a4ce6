#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "cadiff/errors.hpp"
#include "cadiff/persistence.hpp"
#include "test_util.hpp"

namespace cadiff {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cadiff_persist_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<DatasetRecord> some_records() {
  DatasetConfig cfg;
  cfg.kind = ProblemKind::TwoCar;
  cfg.n_instances = 2;
  cfg.solves_per_instance = 2;
  cfg.seed = 8;
  auto recs = generate_dataset(cfg);
  if (recs.empty()) ADD_FAILURE() << "no records";
  return recs;
}

TEST(DatasetFileTest, RoundTripLosslessAndByteStable) {
  const auto dir = temp_dir("dataset");
  const auto recs = some_records();
  save_dataset(recs, dir / "a.jsonl");
  const auto back = load_dataset(dir / "a.jsonl");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].params, recs[i].params);
    EXPECT_EQ(back[i].x_star.values, recs[i].x_star.values);
    EXPECT_EQ(back[i].objective, recs[i].objective);
    EXPECT_EQ(back[i].violation, recs[i].violation);
    EXPECT_EQ(back[i].source_seed, recs[i].source_seed);
  }
  save_dataset(back, dir / "b.jsonl");
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
}

TEST(DatasetFileTest, MalformedLineReported) {
  const auto dir = temp_dir("bad_dataset");
  std::ofstream(dir / "bad.jsonl") << "{\"kind\": \"tabletop\"\n";
  EXPECT_THROW(load_dataset(dir / "bad.jsonl"), IncompatibleFileError);
  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), IoError);
}

TEST(SampleFileTest, RoundTrip) {
  const auto dir = temp_dir("samples");
  const auto recs = some_records();
  std::vector<SampleRecord> s;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    s.push_back({static_cast<int>(i / 2), static_cast<int>(i % 2), recs[i].params, recs[i].x_star, 0.125 * i});
  }
  save_samples(s, dir / "s.jsonl");
  const auto back = load_samples(dir / "s.jsonl");
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].instance, s[i].instance);
    EXPECT_EQ(back[i].x.values, s[i].x.values);
    EXPECT_EQ(back[i].violation, s[i].violation);
  }
  save_samples(back, dir / "t.jsonl");
  EXPECT_EQ(slurp(dir / "s.jsonl"), slurp(dir / "t.jsonl"));
}

TEST(GtTableFileTest, RoundTripAndHeader) {
  const auto dir = temp_dir("gt");
  const auto sched = make_schedule(10, 0.01, 0.5);
  const auto t = compute_gt_violation_table(some_records(), sched, 3, 5, 2);
  save_gt_table(t, dir / "gt.csv");
  const auto back = load_gt_table(dir / "gt.csv");
  EXPECT_EQ(back.mean, t.mean);
  EXPECT_EQ(back.std, t.std);
  EXPECT_EQ(back.ci95_lo, t.ci95_lo);
  EXPECT_EQ(back.ci95_hi, t.ci95_hi);
  EXPECT_EQ(back.kind, t.kind);
  EXPECT_EQ(back.K, 10);
  EXPECT_EQ(back.n_noise, 3);
  EXPECT_EQ(back.m_data, 5);
  EXPECT_EQ(back.beta_end, 0.5);
  std::ifstream in(dir / "gt.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "k,mean,std,ci95_lo,ci95_hi");
  save_gt_table(back, dir / "gt2.csv");
  EXPECT_EQ(slurp(dir / "gt.csv"), slurp(dir / "gt2.csv"));
  EXPECT_EQ(slurp(sidecar_path(dir / "gt.csv")), slurp(sidecar_path(dir / "gt2.csv")));
}

TEST(CheckpointTest, RoundTripExactFloats) {
  const auto dir = temp_dir("ck");
  Denoiser model(ProblemKind::Tabletop, {}, 3);
  Rng rng(1);
  for (auto& p : model.parameters()) p.value += 0.01f * Denoiser::Matrix::Random(p.value.rows(), p.value.cols());
  const auto sched = make_schedule(100, 5e-4, 0.1);
  save_checkpoint(dir / "m.ck", model, sched, 42, TrainMode::Constrained, 0.1);
  const auto ck = load_checkpoint(dir / "m.ck");
  EXPECT_EQ(ck.header.kind, ProblemKind::Tabletop);
  EXPECT_EQ(ck.header.mode, TrainMode::Constrained);
  EXPECT_EQ(ck.header.K, 100);
  EXPECT_EQ(ck.header.seed, 42u);
  EXPECT_EQ(ck.header.lambda, 0.1);
  EXPECT_EQ(ck.schedule.alpha_bar, sched.alpha_bar);
  ASSERT_EQ(ck.model.parameters().size(), model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(ck.model.parameters()[i].name, model.parameters()[i].name);
    EXPECT_EQ(ck.model.parameters()[i].value, model.parameters()[i].value);
  }
  save_checkpoint(dir / "m2.ck", ck.model, ck.schedule, ck.header.seed, ck.header.mode, ck.header.lambda);
  EXPECT_EQ(slurp(dir / "m.ck"), slurp(dir / "m2.ck"));
  EXPECT_EQ(slurp(sidecar_path(dir / "m.ck")), slurp(sidecar_path(dir / "m2.ck")));
}

TEST(CheckpointTest, CorruptFilesRejected) {
  const auto dir = temp_dir("ck_bad");
  const Denoiser model(ProblemKind::TwoCar, {}, 3);
  save_checkpoint(dir / "m.ck", model, make_schedule(20), 1, TrainMode::Vanilla, 0.0);
  const std::string bytes = slurp(dir / "m.ck");

  for (std::size_t cut : {std::size_t{4}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream(dir / "t.ck", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(cut));
    EXPECT_THROW(load_checkpoint(dir / "t.ck"), IncompatibleFileError) << "cut at " << cut;
  }
  std::string magic = bytes;
  magic[0] = 'X';
  std::ofstream(dir / "magic.ck", std::ios::binary) << magic;
  EXPECT_THROW(load_checkpoint(dir / "magic.ck"), IncompatibleFileError);

  std::string version = bytes;
  version[8] = 9;
  std::ofstream(dir / "version.ck", std::ios::binary) << version;
  EXPECT_THROW(load_checkpoint(dir / "version.ck"), IncompatibleFileError);

  std::ofstream(dir / "extra.ck", std::ios::binary) << bytes << "junk";
  EXPECT_THROW(load_checkpoint(dir / "extra.ck"), IncompatibleFileError);
}

TEST(HashTest, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto dir = temp_dir("hash");
  std::ofstream(dir / "f", std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file(dir / "f"), sha256_hex("abc"));
}

}  // namespace
}  // namespace cadiff
