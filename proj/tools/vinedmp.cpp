// vinedmp: dataset generation, training, evaluation, prediction and the HTTP
// service. Exit codes: 0 success, 1 user error, 2 internal error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vinedmp/dataset.hpp"
#include "vinedmp/learner.hpp"
#include "vinedmp/projection.hpp"
#include "vinedmp/service.hpp"

#include <httplib.h>

namespace fs = std::filesystem;
using namespace vinedmp;

namespace {

struct UserError : Error {
  using Error::Error;
};

std::string error_name(const std::exception& e) {
  if (dynamic_cast<const PointBehindCamera*>(&e)) return "PointBehindCamera";
  if (dynamic_cast<const RayParallelToPlane*>(&e)) return "RayParallelToPlane";
  if (dynamic_cast<const DegenerateDirection*>(&e)) return "DegenerateDirection";
  if (dynamic_cast<const ImageTooSmall*>(&e)) return "ImageTooSmall";
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  if (dynamic_cast<const ExhaustedAttempts*>(&e)) return "ExhaustedAttempts";
  if (dynamic_cast<const NonFiniteActivation*>(&e)) return "NonFiniteActivation";
  if (dynamic_cast<const NonFiniteGradient*>(&e)) return "NonFiniteGradient";
  return "";
}

bool is_user_error(const std::exception& e) {
  return dynamic_cast<const UserError*>(&e) || dynamic_cast<const InvalidArgument*>(&e) ||
         dynamic_cast<const FormatError*>(&e) || dynamic_cast<const PointBehindCamera*>(&e) ||
         dynamic_cast<const RayParallelToPlane*>(&e) || dynamic_cast<const DegenerateDirection*>(&e) ||
         dynamic_cast<const ImageTooSmall*>(&e);
}

std::array<double, 3> parse_split(const std::string& s) {
  std::array<double, 3> w{};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const auto slash = s.find('/', pos);
    if ((i < 2) != (slash != std::string::npos)) throw UserError("--split must look like 80/10/10");
    const std::string part = s.substr(pos, i < 2 ? slash - pos : std::string::npos);
    try {
      std::size_t used = 0;
      w[static_cast<std::size_t>(i)] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UserError("--split must look like 80/10/10");
    }
    pos = slash + 1;
  }
  return w;
}

std::pair<int, int> parse_size(const std::string& s) {
  int h = 0, w = 0;
  char x = 0, extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &h, &x, &w, &extra) != 3 || x != 'x' || h <= 0 || w <= 0)
    throw UserError("--image-size must look like 480x640");
  return {h, w};
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UserError(std::string(what) + " not found: " + path);
}

fs::path report_path(const fs::path& ckpt) {
  fs::path p = ckpt;
  p.replace_extension(".report.json");
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw UserError("cannot write " + p.string());
  f << text;
}

std::string format_rmse(const std::string& split, const RmseStats& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s: %.2f ± %.2f px", split.c_str(), s.mean, s.stddev);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision-to-DMP unveiling pipeline"};
  app.require_subcommand(1);

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "generate scenes, oracle demos and a split dataset");
  GenerateOptions gopt;
  std::string split_arg = "80/10/10", size_arg = "480x640", gen_out;
  gen->add_option("--count", gopt.count, "kept samples")->required();
  gen->add_option("--seed", gopt.seed, "generator seed")->required();
  gen->add_option("--split", split_arg, "train/dev/test weights");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--augment-factor", gopt.augment_factor, "replicas per train sample");
  gen->add_option("--image-size", size_arg, "HxW of rendered images");
  gen->add_flag("--busy-background", gopt.busy_background, "cluttered backgrounds");
  bool quiet = false;
  gen->add_flag("--quiet", quiet, "no progress output");

  // train
  auto* tr = app.add_subcommand("train", "train the image-to-DMP regressor");
  std::string data_dir, model_out;
  TrainConfig tcfg;
  NetworkSpec nspec;
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", model_out, "checkpoint path")->required();
  tr->add_option("--epochs", tcfg.epochs, "training epochs")->capture_default_str();
  tr->add_option("--batch", tcfg.batch_size, "mini-batch size")->capture_default_str();
  tr->add_option("--lr", tcfg.lr0, "initial Adam learning rate")->capture_default_str();
  tr->add_option("--halve-every", tcfg.lr_halving_period, "epochs between learning-rate halvings")->capture_default_str();
  tr->add_option("--seed", tcfg.seed, "initialization and shuffling seed")->capture_default_str();
  tr->add_option("--input-size", nspec.input_size, "network input side");
  tr->add_option("--kernels", nspec.num_kernels, "basis functions per axis");
  tr->add_flag("--residual", nspec.residual, "residual blocks");
  tr->add_flag("--quiet", quiet, "no per-epoch output");

  // eval
  auto* ev = app.add_subcommand("eval", "RMSE and simulated success of a checkpoint");
  std::string model_path;
  std::vector<std::string> eval_splits{"test"};
  bool success_sim = false, replay_demos = false;
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--model", model_path, "checkpoint");
  ev->add_option("--split", eval_splits, "split(s) to evaluate")->take_all();
  ev->add_flag("--success-sim", success_sim, "execute predictions on regenerated scenes");
  ev->add_flag("--replay-demos", replay_demos, "score the stored demonstrations instead of a model");

  // predict
  auto* pr = app.add_subcommand("predict", "image -> task-plane trajectory");
  std::string image_path, rig_path, pred_out;
  PredictOptions popt;
  pr->add_option("--model", model_path, "checkpoint")->required();
  pr->add_option("--image", image_path, "PNG image")->required();
  pr->add_option("--rig", rig_path, "camera rig record")->required();
  pr->add_option("--out", pred_out, "output file (default: standard output)");
  pr->add_option("--duration", popt.duration, "execution time T_f in seconds");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP API for the demo studio");
  ServiceOptions sopt;
  int port = 8080;
  std::string host = "127.0.0.1", static_dir;
  sv->add_option("--port", port, "listening port")->required();
  sv->add_option("--host", host, "listening address")->capture_default_str();
  sv->add_option("--data", data_dir, "dataset directory")->required();
  sv->add_option("--model", model_path, "checkpoint to serve predictions from");
  sv->add_option("--static", static_dir, "static files served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      gopt.split = parse_split(split_arg);
      std::tie(gopt.image_height, gopt.image_width) = parse_size(size_arg);
      if (!quiet)
        gopt.progress = [](std::size_t done, std::size_t total) {
          if (done == total || done % 10 == 0) std::cerr << "\rgenerated " << done << "/" << total << std::flush;
          if (done == total) std::cerr << "\n";
        };
      const auto m = generate_dataset(gopt, gen_out);
      std::cout << "wrote " << m.samples.size() << " samples to " << gen_out << " (train "
                << m.entries(Split::train).size() << ", dev " << m.entries(Split::dev).size() << ", test "
                << m.entries(Split::test).size() << ")\n";
      return 0;
    }

    if (*tr) {
      const auto data = Dataset::open(data_dir);
      if (data.manifest().entries(Split::train).empty()) throw UserError("train split is empty");
      if (data.manifest().entries(Split::dev).empty()) throw UserError("dev split required for model selection");
      tcfg.validate();
      VisionDmpModel model(nspec, tcfg.num_loss_points);
      model.initialize(tcfg.seed);
      const int s = nspec.input_size;
      const auto trs = data.prepare(Split::train, s, tcfg.num_loss_points);
      const auto dvs = data.prepare(Split::dev, s, tcfg.num_loss_points);
      const auto tes = data.prepare(Split::test, s, tcfg.num_loss_points);
      TrainReport partial;
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochProgress& p) {
        partial.train_loss.push_back(p.train_loss);
        partial.dev_loss.push_back(p.dev_loss);
        partial.test_loss.push_back(p.test_loss);
        if (!quiet)
          std::fprintf(stderr, "epoch %3d/%d  train %.6f  dev %.6f  test %.6f\n", p.epoch + 1, p.epochs, p.train_loss,
                       p.dev_loss, p.test_loss);
      };
      TrainReport report;
      try {
        report = train(model, trs, dvs, tes, tcfg, hooks);
      } catch (const std::exception& e) {
        partial.error = e.what();
        write_file(report_path(model_out), to_json(partial).dump(2) + "\n");
        throw;
      }
      save_checkpoint(model_out, model);
      report.checkpoint = fs::path(model_out).filename().string();
      write_file(report_path(model_out), to_json(report).dump(2) + "\n");
      std::cout << "best epoch " << report.best_epoch << " (dev loss " << report.dev_loss[report.best_epoch]
                << "); checkpoint " << model_out << "\n";
      return 0;
    }

    if (*ev) {
      const auto data = Dataset::open(data_dir);
      std::optional<VisionDmpModel> model;
      if (!replay_demos) {
        if (model_path.empty()) throw UserError("--model is required unless --replay-demos is given");
        require_file(model_path, "checkpoint");
        model = load_checkpoint(model_path);
      }
      for (const auto& name : eval_splits) {
        const Split split = split_from_string(name);
        const auto entries = data.manifest().entries(split);
        if (entries.empty()) throw UserError("split '" + name + "' is empty");
        if (model) {
          const auto set = data.prepare(split, model->spec().input_size, kEvalPoints);
          std::cout << format_rmse(name, evaluate_rmse(*model, set)) << "\n";
        } else {
          std::cout << name << ": 0.00 ± 0.00 px (stored demonstrations)\n";
        }
        if (success_sim) {
          const auto st = simulate_split(data, split, [&](const ManifestEntry& e) {
            if (model) return predicted_image_trajectory(*model, data.load_image(e));
            return data.load_trajectory(e);
          });
          char buf[128];
          std::snprintf(buf, sizeof buf, "%s success: %zu/%zu (%.1f%%)", name.c_str(), st.successes, st.trials,
                        100.0 * st.rate());
          std::cout << buf << "\n";
        }
      }
      return 0;
    }

    if (*pr) {
      require_file(model_path, "checkpoint");
      require_file(image_path, "image");
      require_file(rig_path, "rig");
      const auto model = load_checkpoint(model_path);
      const auto img = read_png(image_path);
      nlohmann::json rj;
      try {
        std::ifstream f(rig_path);
        rj = nlohmann::json::parse(f);
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(rig_path + ": " + e.what());
      }
      const auto rig = rig_from_json(rj);
      const auto pred = predict_trajectory(model, img, rig, popt);
      const std::string text = to_json(pred).dump(2) + "\n";
      if (pred_out.empty()) {
        std::cout << text;
      } else {
        write_file(pred_out, text);
        const auto& p = pred.plane_trajectory;
        std::cout << p.size() << " task-plane points, yaw " << pred.yaw << " rad -> " << pred_out << "\n";
      }
      return 0;
    }

    if (*sv) {
      sopt.data = data_dir;
      if (!model_path.empty()) {
        require_file(model_path, "checkpoint");
        sopt.model = model_path;
      }
      if (!static_dir.empty()) sopt.static_dir = static_dir;
      Service service(sopt);
      httplib::Server server;
      // httplib defaults to SO_REUSEPORT, which would let a second server
      // silently share a port that is already taken.
      server.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
      });
      service.mount(server);
      if (!server.bind_to_port(host, port)) {
        std::cerr << "error: cannot bind " << host << ":" << port << "\n";
        return 1;
      }
      std::cerr << "serving on http://" << host << ":" << port << "\n";
      server.listen_after_bind();
      return 0;
    }
  } catch (const std::exception& e) {
    const auto name = error_name(e);
    std::cerr << "error: " << (name.empty() ? "" : name + ": ") << e.what() << "\n";
    return is_user_error(e) ? 1 : 2;
  }
  return 0;
}
