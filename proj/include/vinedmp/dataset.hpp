#pragma once

// On-disk datasets: manifest.json plus images/, trajs/, scenes/ and
// aug_config.json, and the oracle pipeline that produces them.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vinedmp/augmentation.hpp"
#include "vinedmp/errors.hpp"
#include "vinedmp/image.hpp"
#include "vinedmp/learner.hpp"
#include "vinedmp/sample.hpp"
#include "vinedmp/scene.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
  std::string id;
  std::string image;       // relative to the dataset root
  std::string trajectory;  // relative to the dataset root
  Split split = Split::train;
  std::string scene;  // empty for augmented replicas
  std::optional<std::uint64_t> scene_seed;
  std::string parent;
};

struct Manifest {
  int image_height = 480;
  int image_width = 640;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<ManifestEntry> samples;

  std::vector<const ManifestEntry*> entries(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : samples)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  const ManifestEntry* find(const std::string& id) const {
    for (const auto& e : samples)
      if (e.id == id) return &e;
    return nullptr;
  }
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json j{{"id", e.id}, {"image", e.image}, {"trajectory", e.trajectory}, {"split", to_string(e.split)}};
  if (!e.scene.empty()) j["scene"] = e.scene;
  if (e.scene_seed) j["scene_seed"] = *e.scene_seed;
  if (!e.parent.empty()) j["parent"] = e.parent;
  return j;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.samples) samples.push_back(to_json(e));
  return {{"version", kManifestVersion},
          {"image_size", {m.image_height, m.image_width}},
          {"provenance", m.provenance},
          {"samples", std::move(samples)}};
}

inline std::string serialize(const Manifest& m) { return to_json(m).dump(2) + "\n"; }

inline Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kManifestVersion) throw FormatError("unsupported manifest version");
    Manifest m;
    m.image_height = j.at("image_size").at(0).get<int>();
    m.image_width = j.at("image_size").at(1).get<int>();
    m.provenance = j.value("provenance", nlohmann::json::object());
    std::set<std::string> ids;
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.image = s.at("image").get<std::string>();
      e.trajectory = s.at("trajectory").get<std::string>();
      e.split = split_from_string(s.at("split").get<std::string>());
      e.scene = s.value("scene", "");
      if (s.contains("scene_seed")) e.scene_seed = s["scene_seed"].get<std::uint64_t>();
      e.parent = s.value("parent", "");
      if (!ids.insert(e.id).second) throw FormatError("duplicate sample id '" + e.id + "'");
      m.samples.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

namespace detail {

inline std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw InvalidArgument("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw Error("failed writing " + p.string());
}

/// Write-then-rename so readers never see a half-written file.
inline void write_text_atomic(const fs::path& p, const std::string& text) {
  fs::path tmp = p;
  tmp += ".tmp";
  write_text(tmp, text);
  fs::rename(tmp, p);
}

inline nlohmann::json parse_json_file(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Maps image-pixel points of an image of the given size into the scene frame.
inline Trajectory image_to_scene(const Trajectory& t, const Scene& scene, int height, int width) {
  Eigen::MatrixXd p = t.points();
  p.col(0) *= static_cast<double>(scene.width) / width;
  p.col(1) *= static_cast<double>(scene.height) / height;
  return Trajectory(std::move(p), Frame::image_px, t.timestamps());
}

inline Trajectory scene_to_image(const Trajectory& t, const Scene& scene, int height, int width) {
  Eigen::MatrixXd p = t.points();
  p.col(0) *= static_cast<double>(width) / scene.width;
  p.col(1) *= static_cast<double>(height) / scene.height;
  return Trajectory(std::move(p), Frame::image_px, t.timestamps());
}

/// Executes an image-pixel trajectory on a fresh copy of `scene` at rest.
inline ExecutionReport execute_on(const Scene& scene, const Trajectory& image_traj, int height, int width,
                                  const ExecutionOptions& opt = {}) {
  Scene trial = scene;
  trial.reset_leaves();
  return execute(trial, image_to_scene(image_traj, scene, height, width), opt);
}

class Dataset {
 public:
  /// Reads and validates an existing dataset.
  static Dataset open(const fs::path& root) {
    const auto mpath = root / "manifest.json";
    if (!fs::exists(mpath)) throw InvalidArgument("no manifest.json in " + root.string());
    Dataset d(root, manifest_from_json(detail::parse_json_file(mpath)));
    d.validate();
    return d;
  }

  /// Opens `root`, creating an empty dataset there if it has no manifest.
  static Dataset open_or_create(const fs::path& root, int height = 480, int width = 640) {
    if (fs::exists(root / "manifest.json")) return open(root);
    fs::create_directories(root);
    Manifest m;
    m.image_height = height;
    m.image_width = width;
    m.provenance = {{"generator", "interactive"}};
    Dataset d(root, std::move(m));
    d.create_layout();
    d.save_manifest();
    return d;
  }

  const fs::path& root() const noexcept { return root_; }
  const Manifest& manifest() const noexcept { return manifest_; }

  /// Busy-background probability the scenes were generated with.
  double busy_probability() const {
    return manifest_.provenance.value("busy_background", false) ? 1.0 : 0.0;
  }

  SceneConfig scene_config() const {
    SceneConfig cfg;
    cfg.busy_probability = busy_probability();
    return cfg;
  }

  Trajectory load_trajectory(const ManifestEntry& e) const {
    return trajectory_from_json(detail::parse_json_file(root_ / e.trajectory));
  }

  RgbImage load_image(const ManifestEntry& e) const { return read_png(root_ / e.image); }

  std::optional<Scene> load_scene(const ManifestEntry& e) const {
    if (e.scene.empty()) return std::nullopt;
    return scene_from_json(detail::parse_json_file(root_ / e.scene));
  }

  Sample load(const ManifestEntry& e) const {
    Sample s;
    s.id = e.id;
    s.image = load_image(e);
    s.trajectory = load_trajectory(e);
    s.split = e.split;
    s.scene_seed = e.scene_seed;
    s.parent = e.parent;
    return s;
  }

  /// Preprocessed samples of one split, in manifest order. Only that split's
  /// files are read.
  std::vector<Prepared> prepare(Split split, int input_size, int points) const {
    std::vector<Prepared> out;
    for (const auto* e : manifest_.entries(split)) {
      const auto img = load_image(*e);
      out.push_back(preprocess(img, load_trajectory(*e), input_size, points));
    }
    return out;
  }

  /// Persists one demonstration with its scene (at rest). Not thread-safe;
  /// callers serialize writers.
  std::string append(const std::string& prefix, const RgbImage& image, const Trajectory& traj, const Scene& scene,
                     Split split = Split::train) {
    if (image.height != manifest_.image_height || image.width != manifest_.image_width)
      throw InvalidArgument("image size differs from the dataset's");
    std::string id;
    for (std::size_t n = manifest_.samples.size();; ++n) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), n);
      if (!manifest_.find(buf)) {
        id = buf;
        break;
      }
    }
    Scene rest = scene;
    rest.reset_leaves();
    auto entry = write_sample_files(root_, id, image, traj, &rest);
    entry.split = split;
    entry.scene_seed = scene.rng_seed;
    manifest_.samples.push_back(std::move(entry));
    save_manifest();
    return id;
  }

  void save_manifest() const { detail::write_text_atomic(root_ / "manifest.json", serialize(manifest_)); }

  static ManifestEntry write_sample_files(const fs::path& root, const std::string& id, const RgbImage& image,
                                          const Trajectory& traj, const Scene* scene) {
    ManifestEntry e;
    e.id = id;
    e.image = "images/" + id + ".png";
    e.trajectory = "trajs/" + id + ".json";
    write_png(root / e.image, image);
    detail::write_text(root / e.trajectory, to_json(traj).dump() + "\n");
    if (scene) {
      e.scene = "scenes/" + id + ".json";
      detail::write_text(root / e.scene, to_json(*scene).dump() + "\n");
    }
    return e;
  }

  static void create_layout(const fs::path& root) {
    for (const char* sub : {"images", "trajs", "scenes"}) fs::create_directories(root / sub);
  }

 private:
  Dataset(fs::path root, Manifest m) : root_(std::move(root)), manifest_(std::move(m)) {}

  void create_layout() const { create_layout(root_); }

  void validate() const {
    for (const auto& e : manifest_.samples) {
      for (const auto& rel : {e.image, e.trajectory, e.scene})
        if (!rel.empty() && !fs::exists(root_ / rel))
          throw FormatError("sample '" + e.id + "' references missing file " + rel);
      if (!e.parent.empty()) {
        const auto* p = manifest_.find(e.parent);
        if (!p) throw FormatError("sample '" + e.id + "' has unknown parent '" + e.parent + "'");
        if (p->split != e.split) throw FormatError("sample '" + e.id + "' is in a different split from its parent");
      }
    }
  }

  fs::path root_;
  Manifest manifest_;
};

// ---------------------------------------------------------------- generation

struct GenerateOptions {
  std::size_t count = 100;
  std::uint64_t seed = 0;
  /// Relative weights of train/dev/test.
  std::array<double, 3> split{80.0, 10.0, 10.0};
  int image_height = 480;
  int image_width = 640;
  bool busy_background = false;
  /// Replicas per train sample; 0 disables augmentation.
  int augment_factor = 0;
  AugmentationConfig augmentation;
  OracleOptions oracle;
  /// Generation attempts allowed per kept sample before giving up.
  int max_attempts_per_sample = 100;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Largest-remainder apportionment of `n` items by `weights`; ties go to the
/// earlier split.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidArgument("split weights must be nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("split weights must not all be zero");
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double q = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(q));
    rem[i] = q - std::floor(q);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

/// Split of each of `n` samples: a seeded shuffle of the apportioned labels.
inline std::vector<Split> assign_splits(std::size_t n, const std::array<double, 3>& weights, std::uint64_t seed) {
  const auto counts = split_counts(n, weights);
  std::vector<Split> labels;
  for (std::size_t i = 0; i < 3; ++i) labels.insert(labels.end(), counts[i], static_cast<Split>(i));
  Rng rng(mix_seed(seed, 0x5b117));
  for (std::size_t i = labels.size(); i > 1; --i)
    std::swap(labels[i - 1], labels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return labels;
}

/// One kept demonstration from the oracle loop.
struct GeneratedDemo {
  Scene scene;  // at rest
  Trajectory trajectory;  // scene frame
  std::uint64_t scene_seed = 0;
  int attempts = 0;
};

/// Draws scenes from consecutive child seeds of (`seed`, `index`) until the
/// oracle's demonstration succeeds in the simulator. Failed attempts are
/// discarded, never stored.
inline GeneratedDemo generate_demo(std::uint64_t seed, std::size_t index, const SceneConfig& cfg,
                                   const OracleOptions& oracle, int max_attempts) {
  ExecutionOptions eo;
  eo.gripper_radius = oracle.gripper_radius;
  eo.occlusion_threshold = oracle.occlusion_threshold;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const std::uint64_t s = mix_seed(mix_seed(seed, index), static_cast<std::uint64_t>(attempt));
    try {
      Scene scene = generate_scene(s, cfg);
      Trajectory demo = oracle_demo(scene, s, oracle);
      Scene trial = scene;
      if (!execute(trial, demo, eo).success) continue;
      return {std::move(scene), std::move(demo), s, attempt + 1};
    } catch (const ExhaustedAttempts&) {
    } catch (const NoOccludingLeaf&) {
    } catch (const OracleFailed&) {
    }
  }
  throw ExhaustedAttempts("sample " + std::to_string(index) + ": no successful demonstration after " +
                          std::to_string(max_attempts) + " scenes");
}

inline std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

/// Generates a complete dataset into `out`. Work happens in a sibling
/// temporary directory that is renamed into place on success and removed on
/// failure, so `out` never holds a partial dataset.
inline Manifest generate_dataset(const GenerateOptions& opt, const fs::path& out) {
  if (opt.count == 0) throw InvalidArgument("count must be positive");
  if (opt.image_height < 64 || opt.image_width < 64) throw InvalidArgument("image size must be at least 64x64");
  if (opt.augment_factor < 0) throw InvalidArgument("augmentation factor must be nonnegative");
  AugmentationConfig aug = opt.augmentation;
  aug.factor = opt.augment_factor;
  aug.validate();
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out)))
    throw InvalidArgument("output " + out.string() + " already exists and is not an empty directory");

  const fs::path target = fs::absolute(out).lexically_normal();
  fs::path tmp = target;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    Dataset::create_layout(tmp);
    SceneConfig cfg;
    cfg.busy_probability = opt.busy_background ? 1.0 : 0.0;
    const auto splits = assign_splits(opt.count, opt.split, opt.seed);
    const std::uint64_t aug_seed = mix_seed(opt.seed, 0xa11a);

    Manifest m;
    m.image_height = opt.image_height;
    m.image_width = opt.image_width;
    m.provenance = {{"generator", "oracle"},
                    {"count", opt.count},
                    {"seed", opt.seed},
                    {"split", opt.split},
                    {"split_counts", split_counts(opt.count, opt.split)},
                    {"busy_background", opt.busy_background},
                    {"augment_factor", opt.augment_factor},
                    {"augment_seed", aug_seed},
                    {"scene_frame", {cfg.height, cfg.width}}};

    for (std::size_t i = 0; i < opt.count; ++i) {
      auto demo = generate_demo(opt.seed, i, cfg, opt.oracle, opt.max_attempts_per_sample);
      Sample s;
      s.id = sample_id(i);
      s.image = render(demo.scene, opt.image_height, opt.image_width);
      s.trajectory = scene_to_image(demo.trajectory, demo.scene, opt.image_height, opt.image_width);
      s.split = splits[i];
      s.scene_seed = demo.scene_seed;

      auto entry = Dataset::write_sample_files(tmp, s.id, s.image, s.trajectory, &demo.scene);
      entry.split = s.split;
      entry.scene_seed = demo.scene_seed;
      m.samples.push_back(std::move(entry));

      if (s.split == Split::train && aug.factor > 0) {
        AugmentationConfig replicas = aug;
        bool first = true;
        for_each_augmented({s}, replicas, aug_seed, [&](Sample&& r) {
          if (first) {  // the original, already written
            first = false;
            return;
          }
          auto e = Dataset::write_sample_files(tmp, r.id, r.image, r.trajectory, nullptr);
          e.split = r.split;
          e.parent = r.parent;
          m.samples.push_back(std::move(e));
        });
      }
      if (opt.progress) opt.progress(i + 1, opt.count);
    }

    nlohmann::json aj = to_json(aug);
    aj["seed"] = aug_seed;
    aj["applies_to"] = "train";
    detail::write_text(tmp / "aug_config.json", aj.dump(2) + "\n");
    detail::write_text(tmp / "manifest.json", serialize(m));
    if (fs::exists(target)) fs::remove(target);
    fs::rename(tmp, target);
    return m;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

// ---------------------------------------------------------------- closed-loop evaluation

struct SuccessStats {
  std::size_t trials = 0;
  std::size_t successes = 0;
  std::vector<std::string> failed;
  double rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0; }
};

/// Clamps image-pixel points into the frame.
inline Trajectory clamp_to_frame(const Eigen::MatrixXd& px, int height, int width) {
  Eigen::MatrixXd p = px;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p(i, 0) = std::clamp(p(i, 0), 0.0, static_cast<double>(width - 1));
    p(i, 1) = std::clamp(p(i, 1), 0.0, static_cast<double>(height - 1));
  }
  return Trajectory(std::move(p), Frame::image_px);
}

/// Executes `trajectory_for(entry)` (image pixels) on each scene of `split`
/// regenerated from its stored seed. Entries without a scene seed are skipped.
inline SuccessStats simulate_split(const Dataset& data, Split split,
                                   const std::function<Trajectory(const ManifestEntry&)>& trajectory_for,
                                   const ExecutionOptions& eo = {}) {
  SuccessStats st;
  const auto cfg = data.scene_config();
  for (const auto* e : data.manifest().entries(split)) {
    if (!e->scene_seed || !e->parent.empty()) continue;
    const Scene scene = generate_scene(*e->scene_seed, cfg);
    const auto traj = trajectory_for(*e);
    const auto& m = data.manifest();
    ++st.trials;
    if (execute_on(scene, traj, m.image_height, m.image_width, eo).success)
      ++st.successes;
    else
      st.failed.push_back(e->id);
  }
  return st;
}

/// Model prediction on a stored image, as `points` image pixels on uniform phases.
inline Trajectory predicted_image_trajectory(const VisionDmpModel& model, const RgbImage& img,
                                             int points = kEvalPoints) {
  const Eigen::MatrixXd w = predict_pixel_weights(model, img);
  return clamp_to_frame(trajectory_from_weights(w, model.basis(), points), img.height, img.width);
}

}  // namespace vinedmp
