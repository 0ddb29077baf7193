// vqct: command-line front end of the vertebral QCT segmentation pipeline.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vqct/phantom.hpp"
#include "vqct/pipeline.hpp"
#include "vqct/server.hpp"
#include "vqct/studies.hpp"
#include "vqct/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

vqct::PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? vqct::PipelineConfig{} : vqct::load_config(path);
}

vqct::PhantomSpec phantom_spec_or_default(const std::string& path) {
  if (path.empty()) return vqct::PhantomSpec::default_three_level();
  std::ifstream in(path);
  if (!in) throw vqct::Error("cannot open phantom spec " + path);
  vqct::PhantomSpec s = json::parse(in).get<vqct::PhantomSpec>();
  s.validate();
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw vqct::Error("cannot write " + path.string());
  out << text;
}

vqct::ViewerServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vertebral QCT segmentation and BMD analysis"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "segment all seeded levels of a volume");
  std::string volume, seeds, config, out;
  int threads = 0;
  bool dump_masks = false, dump_meshes = false, dump_fits = false, quiet = false;
  run->add_option("--volume", volume, "volume header (.vqh)")->required();
  run->add_option("--seeds", seeds, "seeds JSON")->required();
  run->add_option("--config", config, "pipeline config JSON");
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--threads", threads, "levels processed concurrently");
  run->add_flag("--dump-masks", dump_masks);
  run->add_flag("--dump-meshes", dump_meshes);
  run->add_flag("--dump-fits", dump_fits);
  run->add_flag("-q,--quiet", quiet);

  // phantom generate
  auto* phantom = app.add_subcommand("phantom", "digital phantom tools");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("generate", "write a phantom volume, its truth and seeds");
  std::string spec_path, gen_out;
  double noise_factor = 0.0;
  std::uint64_t noise_seed = 1;
  gen->add_option("--spec", spec_path, "phantom spec JSON (default: three levels)");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--noise-factor", noise_factor, "noise sigma in units of 15 mg/cm3");
  gen->add_option("--noise-seed", noise_seed);

  // study accuracy / precision
  auto* study = app.add_subcommand("study", "phantom studies");
  study->require_subcommand(1);
  auto* acc = study->add_subcommand("accuracy", "BMD and volume accuracy over noise levels");
  std::vector<double> factors{0.0, 1.0, 2.0, 4.0};
  int repeats = 1;
  std::string study_out, study_cfg, study_spec;
  acc->add_option("--factors", factors, "noise factors")->delimiter(',');
  acc->add_option("--repeats", repeats);
  acc->add_option("--config", study_cfg);
  acc->add_option("--spec", study_spec);
  acc->add_option("--out", study_out, "result JSON (a .csv is written alongside)")->required();
  auto* prec = study->add_subcommand("precision", "precision under simulated operators");
  vqct::PrecisionOptions popt;
  prec->add_option("--instances", popt.instances);
  prec->add_option("--analyses", popt.analyses);
  prec->add_option("--jitter", popt.jitter_mm, "seed jitter radius (mm)");
  prec->add_option("--noise-factor", popt.noise_factor);
  prec->add_option("--config", study_cfg);
  prec->add_option("--spec", study_spec);
  prec->add_option("--out", study_out, "result JSON")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP interface for the slice viewer");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--volume", volume, "volume header (.vqh)")->required();
  serve->add_option("--config", config);
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      vqct::PipelineConfig cfg = config_or_default(config);
      cfg.volume_path = volume;
      cfg.seeds_path = seeds;
      cfg.output_dir = out;
      if (threads > 0) cfg.threads = threads;
      cfg.dump.masks = cfg.dump.masks || dump_masks;
      cfg.dump.meshes = cfg.dump.meshes || dump_meshes;
      cfg.dump.fits = cfg.dump.fits || dump_fits;
      vqct::ProgressFn progress;
      if (!quiet) {
        progress = [](const std::string& stage, double pct) {
          std::cerr << "[" << static_cast<int>(pct) << "%] " << stage << '\n';
        };
      }
      const int status = vqct::run_from_config(cfg, progress);
      if (status != 0) std::cerr << "some levels failed; see " << (fs::path(out) / "report.json") << '\n';
      return status;
    }
    if (gen->parsed()) {
      vqct::PhantomSpec spec = phantom_spec_or_default(spec_path);
      spec.noise_sigma = vqct::kSigma0 * noise_factor;
      spec.rng_seed = noise_seed;
      const vqct::Phantom ph = vqct::generate_phantom(spec);
      const fs::path dir = gen_out;
      fs::create_directories(dir);
      vqct::write_volume(dir / "phantom.vqh", ph.volume);
      write_text(dir / "truth.json", ph.truth.to_json().dump(2) + "\n");
      for (std::size_t l = 0; l < ph.truth.levels.size(); ++l) {
        const std::string& name = ph.truth.levels[l].name;
        vqct::write_mask(dir / (name + "_vertebra_truth.vqh"), ph.truth.vertebra_mask(l));
        vqct::write_mask(dir / (name + "_body_truth.vqh"), ph.truth.body_mask(l));
        vqct::write_mask(dir / (name + "_trabecular_truth.vqh"), ph.truth.trabecular_mask(l));
      }
      json sj;
      vqct::to_json(sj, vqct::phantom_seeds(ph.truth));
      write_text(dir / "seeds.json", sj.dump(2) + "\n");
      json spj = spec;
      write_text(dir / "spec.json", spj.dump(2) + "\n");
      return 0;
    }
    if (acc->parsed()) {
      vqct::AccuracyOptions opt;
      opt.noise_factors = factors;
      opt.repeats = repeats;
      const auto table = vqct::run_accuracy_study(phantom_spec_or_default(study_spec),
                                                  config_or_default(study_cfg), opt);
      write_text(study_out, table.to_json().dump(2) + "\n");
      write_text(fs::path(study_out).replace_extension(".csv"), table.to_csv());
      std::cout << table.to_csv();
      return table.failures.empty() ? 0 : 1;
    }
    if (prec->parsed()) {
      const auto res = vqct::run_precision_study(phantom_spec_or_default(study_spec),
                                                 config_or_default(study_cfg), popt);
      const json j = res.to_json();
      write_text(study_out, j.dump(2) + "\n");
      std::cout << j["quantities"].dump(2) << '\n';
      return res.failures.empty() ? 0 : 1;
    }
    if (serve->parsed()) {
      vqct::ViewerServer server(vqct::load_volume(volume), config_or_default(config));
      if (!server.bind(host, port)) throw vqct::Error("cannot bind " + host + ":" + std::to_string(port));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving on http://" << host << ":" << port << '\n';
      server.listen();
      g_server = nullptr;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "vqct: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
