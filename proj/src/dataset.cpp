#include "pdeco/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "pdeco/binary_io.hpp"
#include "pdeco/error.hpp"

namespace pdeco {

namespace {

constexpr std::string_view kMagic = "PDET";
constexpr std::string_view kMagicSwapped = "TEDP";

std::size_t record_bytes(std::size_t nodes) { return (3 * nodes + 1) * 8; }

nlohmann::json instance_json(const heat::InstanceParams& p) {
  return {{"seed", p.seed},
          {"source_x", p.source_x},
          {"source_y", p.source_y},
          {"source_width", p.source_width},
          {"source_strength", p.source_strength},
          {"background", p.background},
          {"sink_side", p.sink_side},
          {"sink_start", p.sink_start},
          {"sink_length", p.sink_length},
          {"volume_fraction", p.volume_fraction}};
}

heat::InstanceParams instance_from_json(const nlohmann::json& j) {
  heat::InstanceParams p;
  p.seed = j.at("seed").get<std::uint64_t>();
  p.source_x = j.at("source_x").get<double>();
  p.source_y = j.at("source_y").get<double>();
  p.source_width = j.at("source_width").get<double>();
  p.source_strength = j.at("source_strength").get<double>();
  p.background = j.at("background").get<double>();
  p.sink_side = j.at("sink_side").get<int>();
  p.sink_start = j.at("sink_start").get<double>();
  p.sink_length = j.at("sink_length").get<double>();
  p.volume_fraction = j.at("volume_fraction").get<double>();
  return p;
}

}  // namespace

std::string encode_trajectory(const Trajectory& traj) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kStoreVersion);
  for (const auto& r : traj.records) {
    w.f64s(r.rho);
    w.f64s(r.T);
    w.f64s(r.s);
    w.f64(r.J);
  }
  return w.take();
}

void decode_trajectory(std::string_view bytes, std::size_t records, Trajectory& traj) {
  io::ByteReader r(bytes);
  const auto magic = r.bytes(kMagic.size(), "trajectory magic");
  if (magic == kMagicSwapped) throw FormatError("trajectory file has foreign byte order", 0);
  if (magic != kMagic) throw FormatError("not a PDET trajectory file", 0);
  const std::uint32_t version = r.u32("trajectory version");
  if (version != kStoreVersion) {
    if (version == __builtin_bswap32(kStoreVersion)) throw FormatError("trajectory file has foreign byte order", 4);
    throw FormatError("unsupported trajectory version " + std::to_string(version), 4);
  }
  const std::size_t n = traj.spec.nodes();
  const std::size_t per_record = record_bytes(n);
  traj.records.clear();
  for (std::size_t i = 0; i < records; ++i) {
    if (r.remaining() < per_record) {
      throw FormatError("trajectory truncated in record " + std::to_string(i) + " of " + std::to_string(records),
                        r.offset());
    }
    const std::string what = "record " + std::to_string(i);
    heat::State s;
    s.rho = r.f64s(n, what);
    s.T = r.f64s(n, what);
    s.s = r.f64s(n, what);
    s.J = r.f64(what);
    traj.records.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after record " + std::to_string(records - 1), r.offset());
}

StoreManifest save_store(const std::filesystem::path& dir, const std::vector<Trajectory>& trajectories,
                         const OptimizerConfig& optimizer) {
  if (trajectories.empty()) throw UsageError("save_store: no trajectories");
  const auto& first = trajectories.front();
  StoreManifest m;
  m.nx = first.spec.nx;
  m.ny = first.spec.ny;
  m.num_traj = trajectories.size();
  m.steps = first.records.size() - 1;
  for (const auto& t : trajectories) {
    if (t.spec.nx != m.nx || t.spec.ny != m.ny || t.records.size() != m.steps + 1) {
      throw UsageError("save_store: trajectories must share grid and step count");
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw PathError("cannot create store directory '" + dir.string() + "': " + ec.message());
  // A stale manifest must not describe a half-rewritten store.
  std::filesystem::remove(dir / "manifest.json", ec);

  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "traj_%04zu.bin", i);
    io::write_file_atomic(dir / name, encode_trajectory(trajectories[i]));
    m.files.emplace_back(name);
    entries.push_back({{"file", name}, {"instance", instance_json(trajectories[i].instance)}});
  }
  const auto& spec = first.spec;
  nlohmann::json manifest{
      {"version", m.version},
      {"problem",
       {{"name", m.problem},
        {"k_min", spec.k_min},
        {"k_max", spec.k_max},
        {"simp_exponent", spec.simp_exponent},
        {"volume_weight", spec.volume_weight}}},
      {"grid", {{"nx", m.nx}, {"ny", m.ny}}},
      {"num_traj", m.num_traj},
      {"steps", m.steps},
      {"optimizer",
       {{"step_size", optimizer.step_size},
        {"filter_radius", optimizer.filter_radius},
        {"lower", optimizer.lower},
        {"upper", optimizer.upper}}},
      {"fields",
       nlohmann::json::array({{{"name", "rho"}, {"channels", 1}},
                              {{"name", "T"}, {"channels", 1}},
                              {{"name", "s"}, {"channels", 1}},
                              {{"name", "J"}, {"channels", 0}}})},
      {"trajectories", entries}};
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return m;
}

std::vector<Trajectory> load_store(const std::filesystem::path& dir, StoreManifest* manifest_out) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw PathError("no trajectory store at '" + dir.string() + "' (manifest.json missing)");
  }
  const std::string text = io::read_file(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest: " + std::string(e.what()), e.byte);
  }
  StoreManifest m;
  std::vector<Trajectory> out;
  try {
    m.version = j.at("version").get<std::uint32_t>();
    if (m.version != kStoreVersion) throw FormatError("unsupported store version " + std::to_string(m.version), 0);
    const auto& problem = j.at("problem");
    m.problem = problem.at("name").get<std::string>();
    m.nx = j.at("grid").at("nx").get<std::size_t>();
    m.ny = j.at("grid").at("ny").get<std::size_t>();
    m.num_traj = j.at("num_traj").get<std::size_t>();
    m.steps = j.at("steps").get<std::size_t>();
    const auto& entries = j.at("trajectories");
    if (entries.size() != m.num_traj) throw FormatError("manifest lists a different number of trajectories than num_traj", 0);
    for (const auto& e : entries) {
      Trajectory t;
      t.instance = instance_from_json(e.at("instance"));
      t.spec = heat::build_spec(t.instance, m.nx, m.ny);
      t.spec.k_min = problem.at("k_min").get<double>();
      t.spec.k_max = problem.at("k_max").get<double>();
      t.spec.simp_exponent = problem.at("simp_exponent").get<double>();
      t.spec.volume_weight = problem.at("volume_weight").get<double>();
      const auto file = e.at("file").get<std::string>();
      m.files.push_back(file);
      try {
        decode_trajectory(io::read_file(dir / file), m.steps + 1, t);
      } catch (const FormatError& fe) {
        throw FormatError(file + ": " + fe.detail(), fe.offset());
      }
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()), 0);
  }
  if (manifest_out) *manifest_out = m;
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_trajectory(std::size_t num_traj, double ratio,
                                                                                    std::uint64_t seed) {
  if (num_traj < 2) throw UsageError("split_by_trajectory: need at least 2 trajectories");
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split_by_trajectory: ratio must lie in (0, 1)");
  std::vector<std::size_t> ids(num_traj);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the split is library-independent.
  for (std::size_t i = num_traj - 1; i > 0; --i) {
    const std::size_t k = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(ids[i], ids[k]);
  }
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_traj)));
  n_train = std::clamp<std::size_t>(n_train, 1, num_traj - 1);
  std::vector<std::size_t> train(ids.begin(), ids.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> test(ids.begin() + static_cast<long>(n_train), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

void PairingConfig::validate() const {
  if (!(threshold > 0.0)) throw ConfigError("pairing: threshold must be positive");
  if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) {
    throw ConfigError("pairing: drop probability must lie in [0, 1]");
  }
}

double relative_l2(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("relative_l2: length mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

std::vector<std::size_t> reference_candidates(const Trajectory& traj, std::size_t i, const PairingConfig& cfg) {
  if (i >= traj.records.size()) throw UsageError("pair_reference: step index out of range");
  const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
  const std::size_t hi = std::min(traj.records.size() - 1, i + cfg.window);
  std::vector<std::size_t> out;
  for (std::size_t j = lo; j <= hi; ++j) {
    if (j == i || relative_l2(traj.records[j].T, traj.records[i].T) < cfg.threshold) out.push_back(j);
  }
  return out;
}

TrainingSample pair_reference(const Trajectory& traj, std::size_t i, const PairingConfig& cfg, std::mt19937_64& rng) {
  const auto candidates = reference_candidates(traj, i, cfg);
  TrainingSample sample;
  sample.step = i;
  const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng);
  const bool drop = std::bernoulli_distribution(cfg.drop_probability)(rng);
  if (!drop) sample.reference = candidates[pick];
  return sample;
}

}  // namespace pdeco
