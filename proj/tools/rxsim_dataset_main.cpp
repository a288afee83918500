// Generates the synthetic digit corpus and writes it as IDX files with the
// conventional names the other tools expect.
#include <chrono>
#include <filesystem>
#include <iostream>

#include "rxsim/dataset.hpp"
#include "rxsim/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

int main(int argc, char** argv) {
  CLI::App app{"Synthetic digit corpus generator", "rxsim-dataset"};
  std::string out_dir;
  rxsim::SynthConfig cfg;
  app.add_option("--out-dir", out_dir, "Directory for the IDX files")->required();
  app.add_option("--train-count", cfg.train_count, "Training samples")->capture_default_str();
  app.add_option("--test-count", cfg.test_count, "Test samples")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Corpus seed")->capture_default_str();
  app.add_option("--bold", cfg.bold, "Stroke half-width scale")->capture_default_str();
  app.add_option("--noise", cfg.noise, "Pixel noise sigma")->capture_default_str();
  app.add_option("--jitter", cfg.jitter, "Control-point jitter sigma")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    const rxsim::SynthData data = rxsim::generate_synthetic(cfg);
    const double gen_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string tri = (fs::path(out_dir) / "train-images.idx").string();
    const std::string trl = (fs::path(out_dir) / "train-labels.idx").string();
    const std::string tei = (fs::path(out_dir) / "test-images.idx").string();
    const std::string tel = (fs::path(out_dir) / "test-labels.idx").string();
    rxsim::save_idx_images(tri, data.train.images, 28, 28);
    rxsim::save_idx_labels(trl, data.train.labels);
    rxsim::save_idx_images(tei, data.test.images, 28, 28);
    rxsim::save_idx_labels(tel, data.test.labels);

    nlohmann::json doc;
    doc["command"] = "rxsim-dataset";
    doc["format_version"] = 1;
    doc["config"] = {{"out_dir", out_dir},     {"train_count", cfg.train_count},
                     {"test_count", cfg.test_count}, {"seed", cfg.seed},
                     {"bold", cfg.bold},       {"noise", cfg.noise},
                     {"jitter", cfg.jitter}};
    doc["seed"] = cfg.seed;
    doc["files"] = {tri, trl, tei, tel};
    doc["gen_seconds"] = gen_seconds;
    std::cout << doc.dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
