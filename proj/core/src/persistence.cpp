#include "cadiff/persistence.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "cadiff/errors.hpp"

namespace cadiff {

using nlohmann::json;

namespace {

json points_to_json(const std::vector<Point2>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x(), p.y()});
  return a;
}

std::vector<Point2> points_from_json(const json& a) {
  std::vector<Point2> pts;
  for (const auto& p : a) {
    if (!p.is_array() || p.size() != 2) throw IncompatibleFileError("point must have two coordinates");
    pts.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return pts;
}

json params_to_json(const ProblemParams& p) {
  return {{"goals", points_to_json(p.goals)},
          {"obstacle_centers", points_to_json(p.obstacle_centers)},
          {"obstacle_radii", p.obstacle_radii}};
}

ProblemParams params_from_json(const json& kind, const json& p) {
  ProblemParams out;
  out.kind = problem_kind_from_string(kind.get<std::string>());
  out.goals = points_from_json(p.at("goals"));
  out.obstacle_centers = points_from_json(p.at("obstacle_centers"));
  out.obstacle_radii = p.at("obstacle_radii").get<std::vector<double>>();
  validate_params(out);
  return out;
}

DecisionVector decision_from_json(ProblemKind kind, const json& a) {
  const auto x = a.get<std::vector<double>>();
  if (static_cast<int>(x.size()) != layout(kind).decision_dim()) {
    throw IncompatibleFileError("decision vector has " + std::to_string(x.size()) + " entries");
  }
  return DecisionVector{kind, Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())), true};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

json read_json_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IncompatibleFileError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& file) {
  return std::filesystem::path(file.string() + ".json");
}

// ---------------------------------------------------------------------------
// Dataset

void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& r : records) {
    if (!r.x_star.normalized) throw ConfigError("dataset records must hold normalized decision vectors");
    const json j = {{"kind", to_string(r.params.kind)},
                    {"params", params_to_json(r.params)},
                    {"x_star", std::vector<double>(r.x_star.values.data(), r.x_star.values.data() + r.x_star.values.size())},
                    {"objective", r.objective},
                    {"violation", r.violation},
                    {"source_seed", r.source_seed}};
    out << j.dump() << '\n';
  }
  finish(out, path);
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<DatasetRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      DatasetRecord r;
      r.params = params_from_json(j.at("kind"), j.at("params"));
      r.x_star = decision_from_json(r.params.kind, j.at("x_star"));
      r.objective = j.at("objective").get<double>();
      r.violation = j.at("violation").get<double>();
      r.source_seed = j.at("source_seed").get<std::uint64_t>();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IncompatibleFileError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw IncompatibleFileError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const IncompatibleFileError& e) {
      throw IncompatibleFileError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_samples(const std::vector<SampleRecord>& samples, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& r : samples) {
    if (!r.x.normalized) throw ConfigError("samples must hold normalized decision vectors");
    const json j = {{"instance", r.instance},
                    {"sample", r.sample},
                    {"kind", to_string(r.params.kind)},
                    {"params", params_to_json(r.params)},
                    {"x", std::vector<double>(r.x.values.data(), r.x.values.data() + r.x.values.size())},
                    {"violation", r.violation}};
    out << j.dump() << '\n';
  }
  finish(out, path);
}

std::vector<SampleRecord> load_samples(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<SampleRecord> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SampleRecord r;
      r.instance = j.at("instance").get<int>();
      r.sample = j.at("sample").get<int>();
      r.params = params_from_json(j.at("kind"), j.at("params"));
      r.x = decision_from_json(r.params.kind, j.at("x"));
      r.violation = j.at("violation").get<double>();
      samples.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IncompatibleFileError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw IncompatibleFileError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const IncompatibleFileError& e) {
      throw IncompatibleFileError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

// ---------------------------------------------------------------------------
// GT table

void save_gt_table(const GtViolationTable& table, const std::filesystem::path& csv_path) {
  auto out = open_out(csv_path);
  out << "k,mean,std,ci95_lo,ci95_hi\n" << std::setprecision(17);
  for (int k = 0; k <= table.K; ++k) {
    out << k << ',' << table.mean[k] << ',' << table.std[k] << ',' << table.ci95_lo[k] << ',' << table.ci95_hi[k]
        << '\n';
  }
  finish(out, csv_path);
  write_json_file({{"kind", to_string(table.kind)},
                   {"K", table.K},
                   {"beta_start", table.beta_start},
                   {"beta_end", table.beta_end},
                   {"N", table.n_noise},
                   {"M", table.m_data},
                   {"seed", table.seed},
                   {"epsilon_floor", table.epsilon_floor}},
                  sidecar_path(csv_path));
}

GtViolationTable load_gt_table(const std::filesystem::path& csv_path) {
  const json meta = read_json_file(sidecar_path(csv_path));
  GtViolationTable t;
  try {
    t.kind = problem_kind_from_string(meta.at("kind").get<std::string>());
    t.K = meta.at("K").get<int>();
    t.beta_start = meta.at("beta_start").get<double>();
    t.beta_end = meta.at("beta_end").get<double>();
    t.n_noise = meta.at("N").get<int>();
    t.m_data = meta.at("M").get<int>();
    t.seed = meta.at("seed").get<std::uint64_t>();
    t.epsilon_floor = meta.at("epsilon_floor").get<double>();
  } catch (const json::exception& e) {
    throw IncompatibleFileError("bad gt table sidecar for '" + csv_path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw IncompatibleFileError("bad gt table sidecar for '" + csv_path.string() + "': " + e.what());
  }
  if (t.K < 1) throw IncompatibleFileError("gt table sidecar has K < 1");
  t.mean.resize(t.K + 1);
  t.std.resize(t.K + 1);
  t.ci95_lo.resize(t.K + 1);
  t.ci95_hi.resize(t.K + 1);

  auto in = open_in(csv_path);
  std::string line;
  if (!std::getline(in, line) || line != "k,mean,std,ci95_lo,ci95_hi") {
    throw IncompatibleFileError("gt table '" + csv_path.string() + "' has an unexpected header");
  }
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::array<double, 4> v{};
    int k = -1;
    char comma = 0;
    ss >> k;
    for (double& x : v) ss >> comma >> x;
    if (!ss || comma != ',' || k != rows || k > t.K) {
      throw IncompatibleFileError("gt table '" + csv_path.string() + "' row " + std::to_string(rows) + " is malformed");
    }
    t.mean[k] = v[0];
    t.std[k] = v[1];
    t.ci95_lo[k] = v[2];
    t.ci95_hi[k] = v[3];
    ++rows;
  }
  if (rows != t.K + 1) throw IncompatibleFileError("gt table '" + csv_path.string() + "' has " +
                                                   std::to_string(rows) + " rows, expected " +
                                                   std::to_string(t.K + 1));
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'A', 'D', 'I', 'F', 'F', 'C', 'K'};

template <typename T>
void put(std::string& buf, T v) {
  static_assert(std::is_arithmetic_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  buf.append(bytes.data(), bytes.size());
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IncompatibleFileError("checkpoint '" + path_ + "' is truncated");
  }

  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

json header_json(const CheckpointHeader& h, std::size_t tensors) {
  return {{"format", "cadiff-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", to_string(h.kind)},
          {"profile", to_string(h.architecture.profile)},
          {"mode", to_string(h.mode)},
          {"K", h.K},
          {"beta_start", h.beta_start},
          {"beta_end", h.beta_end},
          {"seed", h.seed},
          {"lambda", h.lambda},
          {"time_embed_dim", h.architecture.time_embed_dim},
          {"encoder_widths", h.architecture.encoder_widths},
          {"trunk_widths", h.architecture.trunk_widths},
          {"tensors", tensors}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model, const NoiseSchedule& sched,
                     std::uint64_t seed, TrainMode mode, double lambda) {
  const DenoiserArchitecture& a = model.architecture();
  std::string buf(kMagic.data(), kMagic.size());
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.kind()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.profile));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(mode));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(sched.K));
  put<double>(buf, sched.beta_start);
  put<double>(buf, sched.beta_end);
  put<std::uint64_t>(buf, seed);
  put<double>(buf, lambda);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.time_embed_dim));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.encoder_widths.size()));
  for (int w : a.encoder_widths) put<std::uint32_t>(buf, static_cast<std::uint32_t>(w));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(a.trunk_widths.size()));
  for (int w : a.trunk_widths) put<std::uint32_t>(buf, static_cast<std::uint32_t>(w));
  const auto& params = model.parameters();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.rows()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put<float>(buf, p.value.data()[i]);
  }
  {
    auto out = open_out(path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    finish(out, path);
  }
  CheckpointHeader h{model.kind(), a, mode, sched.K, sched.beta_start, sched.beta_end, seed, lambda};
  write_json_file(header_json(h, params.size()), sidecar_path(path));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path.string());

  if (r.bytes(kMagic.size()) != std::string(kMagic.data(), kMagic.size())) {
    throw IncompatibleFileError("'" + path.string() + "' is not a cadiff checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IncompatibleFileError("checkpoint '" + path.string() + "' has version " + std::to_string(version) +
                                ", expected " + std::to_string(kCheckpointVersion));
  }
  CheckpointHeader h;
  const auto kind = r.get<std::uint32_t>();
  const auto profile = r.get<std::uint32_t>();
  const auto mode = r.get<std::uint32_t>();
  if (kind > 1 || profile > 1 || mode > 1) throw IncompatibleFileError("checkpoint '" + path.string() + "' has a bad header");
  h.kind = static_cast<ProblemKind>(kind);
  h.architecture.profile = static_cast<ArchitectureProfile>(profile);
  h.mode = static_cast<TrainMode>(mode);
  h.K = static_cast<int>(r.get<std::uint32_t>());
  h.beta_start = r.get<double>();
  h.beta_end = r.get<double>();
  h.seed = r.get<std::uint64_t>();
  h.lambda = r.get<double>();
  h.architecture.time_embed_dim = static_cast<int>(r.get<std::uint32_t>());
  const auto read_widths = [&] {
    const auto n = r.get<std::uint32_t>();
    if (n > 64) throw IncompatibleFileError("checkpoint '" + path.string() + "' has a bad layer count");
    std::vector<int> w(n);
    for (auto& x : w) x = static_cast<int>(r.get<std::uint32_t>());
    return w;
  };
  h.architecture.encoder_widths = read_widths();
  h.architecture.trunk_widths = read_widths();

  const auto n_tensors = r.get<std::uint32_t>();
  std::vector<NamedTensor<float>> tensors;
  for (std::uint32_t t = 0; t < n_tensors; ++t) {
    const auto name_len = r.get<std::uint32_t>();
    NamedTensor<float> nt;
    nt.name = r.bytes(name_len);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count > (1ull << 32)) throw IncompatibleFileError("checkpoint '" + path.string() + "' has an oversized tensor");
    nt.value.resize(rows, cols);
    for (std::uint64_t i = 0; i < count; ++i) nt.value.data()[i] = r.get<float>();
    tensors.push_back(std::move(nt));
  }
  if (!r.at_end()) throw IncompatibleFileError("checkpoint '" + path.string() + "' has trailing bytes");

  NoiseSchedule sched;
  try {
    sched = make_schedule(h.K, h.beta_start, h.beta_end);
  } catch (const ConfigError& e) {
    throw IncompatibleFileError("checkpoint '" + path.string() + "' has an invalid schedule: " + e.what());
  }
  Denoiser model = [&] {
    try {
      return Denoiser::from_tensors(h.kind, h.architecture, std::move(tensors));
    } catch (const ConfigError& e) {
      throw IncompatibleFileError("checkpoint '" + path.string() + "': " + e.what());
    }
  }();
  return Checkpoint{std::move(h), std::move(model), std::move(sched)};
}

// ---------------------------------------------------------------------------
// Hashing

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw IoError("SHA-256 update failed");
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md.data(), &len) != 1) throw IoError("SHA-256 final failed");
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

}  // namespace cadiff
