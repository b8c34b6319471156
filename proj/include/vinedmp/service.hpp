#pragma once

// HTTP API over a dataset directory: scene sampling, demo execution and
// acceptance, prediction from the loaded checkpoint, and one background
// training job at a time.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

// Eigen must come before httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen's parameter names.
#include "vinedmp/dataset.hpp"
#include "vinedmp/learner.hpp"
#include "vinedmp/scene.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace vinedmp {

enum class JobState { pending, running, done, failed };

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

struct JobStatus {
  std::string id;
  JobState state = JobState::pending;
  int epoch = 0;  // completed epochs
  int epochs = 0;
  TrainReport report;
  std::string error;
};

inline nlohmann::json to_json(const JobStatus& s) {
  nlohmann::json j{{"job_id", s.id},
                   {"state", to_string(s.state)},
                   {"progress", {{"epoch", s.epoch}, {"epochs", s.epochs}}},
                   {"train_loss", s.report.train_loss},
                   {"dev_loss", s.report.dev_loss},
                   {"test_loss", s.report.test_loss}};
  if (s.report.best_epoch >= 0) j["best_epoch"] = s.report.best_epoch;
  if (!s.report.checkpoint.empty()) j["checkpoint"] = s.report.checkpoint;
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

struct ServiceOptions {
  std::filesystem::path data;
  std::optional<std::filesystem::path> model;
  /// Directory served at "/" (the demo studio build), if any.
  std::optional<std::filesystem::path> static_dir;
  /// Seed for scenes requested without one.
  std::uint64_t seed = 0;
  NetworkSpec network;
};

class Service {
 public:
  explicit Service(ServiceOptions opt)
      : opt_(std::move(opt)), dataset_(Dataset::open_or_create(opt_.data)) {
    if (opt_.model) model_ = std::make_shared<const VisionDmpModel>(load_checkpoint(*opt_.model));
  }

  ~Service() {
    cancel_.store(true);
    if (trainer_.joinable()) trainer_.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Blocks until a running training job finishes.
  void wait_for_training() {
    std::lock_guard lock(job_mutex_);
    if (trainer_.joinable()) trainer_.join();
  }

  std::shared_ptr<const VisionDmpModel> model() const {
    std::lock_guard lock(model_mutex_);
    return model_;
  }

  void mount(httplib::Server& svr) {
    using httplib::Request;
    using httplib::Response;

    svr.Get("/api/health", [](const Request&, Response& res) { send(res, {{"status", "ok"}}); });

    svr.Post("/api/scenes", [this](const Request& req, Response& res) {
      handle(res, [&] {
        std::optional<std::uint64_t> seed;
        if (!req.body.empty()) {
          const auto body = parse_body(req);
          if (body.contains("seed") && !body["seed"].is_null()) {
            if (!body["seed"].is_number_unsigned() && !body["seed"].is_number_integer())
              throw BadRequest("seed must be a nonnegative integer");
            seed = body["seed"].get<std::uint64_t>();
          }
        }
        std::lock_guard lock(scenes_mutex_);
        const std::uint64_t s = seed ? *seed : mix_seed(opt_.seed, next_scene_++);
        SceneConfig cfg;
        {
          std::lock_guard dl(dataset_mutex_);
          cfg = dataset_.scene_config();
        }
        const std::string id = "scene" + std::to_string(scenes_.size());
        scenes_.emplace(id, SceneSlot{generate_scene(s, cfg), false});
        send(res, {{"scene_id", id}, {"seed", s}});
      });
    });

    svr.Get(R"(/api/scenes/([A-Za-z0-9_-]+)/image)", [this](const Request& req, Response& res) {
      handle(res, [&] {
        const Scene scene = find_scene(req.matches[1]);
        const auto [h, w] = image_size();
        const auto png = encode_png(render(scene, h, w));
        res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
      });
    });

    svr.Get(R"(/api/scenes/([A-Za-z0-9_-]+))", [this](const Request& req, Response& res) {
      handle(res, [&] {
        const std::string id = req.matches[1];
        auto j = to_json(find_scene(id));
        const auto [h, w] = image_size();
        j["scene_id"] = id;
        j["image_size"] = {h, w};
        send(res, j);
      });
    });

    svr.Post(R"(/api/scenes/([A-Za-z0-9_-]+)/demo)", [this](const Request& req, Response& res) {
      handle(res, [&] {
        const Scene scene = find_scene(req.matches[1]);
        const auto traj = demo_points(req);
        const auto [h, w] = image_size();
        send(res, to_json(run_demo(scene, traj, h, w)));
      });
    });

    svr.Post(R"(/api/scenes/([A-Za-z0-9_-]+)/accept)", [this](const Request& req, Response& res) {
      handle(res, [&] {
        const std::string id = req.matches[1];
        const Scene scene = find_scene(id);
        const auto body = parse_body(req);
        const auto traj = demo_points(body);
        Split split = Split::train;
        if (body.contains("split")) {
          try {
            split = split_from_string(body["split"].get<std::string>());
          } catch (const std::exception&) {
            throw BadRequest("split must be one of train, dev, test");
          }
        }
        const auto [h, w] = image_size();
        if (!run_demo(scene, traj, h, w).success)
          throw Conflict("demonstration does not unveil the stem; not persisted");
        {
          std::lock_guard lock(scenes_mutex_);
          auto& slot = scenes_.at(id);
          if (slot.accepted) throw Conflict("scene " + id + " already has an accepted demonstration");
          slot.accepted = true;
        }
        std::string sample;
        try {
          std::lock_guard lock(dataset_mutex_);
          sample = dataset_.append("d", render(scene, h, w), traj, scene, split);
        } catch (...) {
          std::lock_guard lock(scenes_mutex_);
          scenes_.at(id).accepted = false;
          throw;
        }
        send(res, {{"sample_id", sample}});
      });
    });

    svr.Get(R"(/api/predict/([A-Za-z0-9_-]+))", [this](const Request& req, Response& res) {
      handle(res, [&] {
        const Scene scene = find_scene(req.matches[1]);
        const auto m = model();
        if (!m) throw Conflict("no checkpoint loaded");
        const auto [h, w] = image_size();
        const auto img = render(scene, h, w);
        const Eigen::MatrixXd weights = predict_pixel_weights(*m, img);
        const Eigen::MatrixXd pts = trajectory_from_weights(weights, m->basis(), kEvalPoints);
        const Eigen::Vector2d start = pts.row(0).transpose(), goal = pts.row(pts.rows() - 1).transpose();
        nlohmann::json points = nlohmann::json::array();
        for (Eigen::Index i = 0; i < pts.rows(); ++i) points.push_back({pts(i, 0), pts(i, 1)});
        nlohmann::json j{{"points", points},
                         {"start", {start.x(), start.y()}},
                         {"goal", {goal.x(), goal.y()}},
                         {"image_size", {h, w}}};
        try {
          j["yaw"] = gripper_yaw(start, goal);
        } catch (const DegenerateDirection&) {
          j["yaw"] = nullptr;
        }
        send(res, j);
      });
    });

    svr.Post("/api/train", [this](const Request& req, Response& res) {
      handle(res, [&] { send(res, {{"job_id", start_training(req.body.empty() ? nlohmann::json::object() : parse_body(req))}}); });
    });

    svr.Get(R"(/api/jobs/([A-Za-z0-9_-]+))", [this](const Request& req, Response& res) {
      handle(res, [&] {
        const auto s = job_snapshot();
        if (!s || s->id != req.matches[1].str()) throw NotFound("unknown job " + req.matches[1].str());
        send(res, to_json(*s));
      });
    });

    if (opt_.static_dir) svr.set_mount_point("/", opt_.static_dir->string());

    svr.set_error_handler([](const Request&, Response& res) {
      if (res.body.empty()) {
        res.set_content(nlohmann::json{{"error", res.status == 404 ? "not found" : "error"}}.dump(),
                        "application/json");
      }
    });
  }

 private:
  struct HttpError : Error {
    HttpError(int s, const std::string& m) : Error(m), status(s) {}
    int status;
  };
  struct BadRequest : HttpError {
    explicit BadRequest(const std::string& m) : HttpError(400, m) {}
  };
  struct NotFound : HttpError {
    explicit NotFound(const std::string& m) : HttpError(404, m) {}
  };
  struct Conflict : HttpError {
    explicit Conflict(const std::string& m) : HttpError(409, m) {}
  };

  struct SceneSlot {
    Scene scene;
    bool accepted = false;
  };

  static void send(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  /// Maps library errors onto status codes: caller mistakes are 400,
  /// everything unexpected is 500.
  template <class F>
  static void handle(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const HttpError& e) {
      send(res, {{"error", e.what()}}, e.status);
    } catch (const InvalidArgument& e) {
      send(res, {{"error", e.what()}}, 400);
    } catch (const OutOfBounds& e) {
      send(res, {{"error", e.what()}, {"index", e.index()}}, 400);
    } catch (const FormatError& e) {
      send(res, {{"error", e.what()}}, 400);
    } catch (const std::exception& e) {
      send(res, {{"error", e.what()}}, 500);
    }
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    try {
      auto j = nlohmann::json::parse(req.body);
      if (!j.is_object()) throw BadRequest("body must be a JSON object");
      return j;
    } catch (const nlohmann::json::parse_error& e) {
      throw BadRequest(std::string("malformed JSON: ") + e.what());
    }
  }

  static Trajectory demo_points(const nlohmann::json& body) {
    if (!body.contains("points")) throw BadRequest("missing 'points'");
    try {
      return Trajectory(points_from_json(body["points"]), Frame::image_px);
    } catch (const FormatError& e) {
      throw BadRequest(e.what());
    } catch (const InvalidArgument& e) {
      throw BadRequest(e.what());
    }
  }

  static Trajectory demo_points(const httplib::Request& req) { return demo_points(parse_body(req)); }

  static ExecutionReport run_demo(const Scene& scene, const Trajectory& traj, int h, int w) {
    auto r = execute_on(scene, traj, h, w);
    r.gripper_path = scene_to_image(r.gripper_path, scene, h, w);
    return r;
  }

  Scene find_scene(const std::string& id) {
    std::lock_guard lock(scenes_mutex_);
    const auto it = scenes_.find(id);
    if (it == scenes_.end()) throw NotFound("unknown scene " + id);
    return it->second.scene;
  }

  std::pair<int, int> image_size() {
    std::lock_guard lock(dataset_mutex_);
    return {dataset_.manifest().image_height, dataset_.manifest().image_width};
  }

  std::shared_ptr<const JobStatus> job_snapshot() const {
    std::lock_guard lock(status_mutex_);
    return status_;
  }

  void publish(JobStatus s) {
    auto p = std::make_shared<const JobStatus>(std::move(s));
    std::lock_guard lock(status_mutex_);
    status_ = std::move(p);
  }

  std::string start_training(const nlohmann::json& body) {
    std::lock_guard lock(job_mutex_);
    const auto current = job_snapshot();
    if (current && (current->state == JobState::pending || current->state == JobState::running))
      throw Conflict("a training job is already running");
    if (trainer_.joinable()) trainer_.join();

    TrainConfig cfg;
    try {
      cfg = train_config_from_json(body.value("config", body));
    } catch (const Error& e) {
      throw BadRequest(e.what());
    }
    Dataset snapshot = [&] {
      std::lock_guard dl(dataset_mutex_);
      return dataset_;
    }();
    if (snapshot.manifest().entries(Split::train).empty()) throw BadRequest("train split is empty");
    if (snapshot.manifest().entries(Split::dev).empty()) throw BadRequest("dev split required for model selection");

    JobStatus st;
    st.id = "job" + std::to_string(++job_counter_);
    st.epochs = cfg.epochs;
    publish(st);
    cancel_.store(false);
    trainer_ = std::thread([this, st, cfg, snapshot = std::move(snapshot)]() mutable {
      run_training(std::move(st), cfg, std::move(snapshot));
    });
    return st.id;
  }

  void run_training(JobStatus st, TrainConfig cfg, Dataset data) {
    try {
      st.state = JobState::running;
      publish(st);
      VisionDmpModel model(opt_.network, cfg.num_loss_points);
      model.initialize(cfg.seed);
      const int s = model.spec().input_size;
      const auto tr = data.prepare(Split::train, s, cfg.num_loss_points);
      const auto dv = data.prepare(Split::dev, s, cfg.num_loss_points);
      const auto te = data.prepare(Split::test, s, cfg.num_loss_points);
      TrainHooks hooks;
      hooks.cancel = &cancel_;
      hooks.on_epoch = [&](const EpochProgress& p) {
        st.epoch = p.epoch + 1;
        st.report.train_loss.push_back(p.train_loss);
        st.report.dev_loss.push_back(p.dev_loss);
        st.report.test_loss.push_back(p.test_loss);
        publish(st);
      };
      auto report = train(model, tr, dv, te, cfg, hooks);
      const auto dir = data.root() / "models";
      std::filesystem::create_directories(dir);
      const auto ckpt = dir / (st.id + ".ckpt");
      save_checkpoint(ckpt, model);
      report.checkpoint = ckpt.filename().string();
      detail::write_text(dir / (st.id + ".report.json"), to_json(report).dump(2) + "\n");
      {
        std::lock_guard lock(model_mutex_);
        model_ = std::make_shared<const VisionDmpModel>(std::move(model));
      }
      st.report = report;
      st.state = JobState::done;
      publish(st);
    } catch (const std::exception& e) {
      st.state = JobState::failed;
      st.error = e.what();
      publish(st);
    }
  }

  ServiceOptions opt_;

  std::mutex dataset_mutex_;  // single writer per dataset
  Dataset dataset_;

  std::mutex scenes_mutex_;
  std::map<std::string, SceneSlot> scenes_;
  std::uint64_t next_scene_ = 0;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const VisionDmpModel> model_;

  std::mutex job_mutex_;
  mutable std::mutex status_mutex_;
  std::shared_ptr<const JobStatus> status_;
  int job_counter_ = 0;
  std::atomic<bool> cancel_{false};
  std::thread trainer_;
};

}  // namespace vinedmp
