// Command-line front end: dataset synthesis, encoding, decoding, rendering,
// evaluation, RD curves, BD-rate and the ablation table.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 malformed
// stream or file, 3 failed `eval --check`.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nvv/nvv.hpp"

namespace fs = std::filesystem;
using namespace nvv;

namespace {

constexpr int kExitUsage = 1, kExitFormat = 2, kExitCheck = 3;

/// Config file plus --set overrides; returns the non-TrainConfig keys.
std::map<std::string, std::string> load_train_config(const std::string& path, const std::vector<std::string>& sets,
                                                     TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  if (!path.empty()) kv = read_config_file(path);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  auto rest = apply_settings(cfg, kv);
  for (const auto& [k, v] : rest)
    if (k != "dataset" && k != "frames") throw config_error("unknown config key '" + k + "'");
  cfg.validate();
  return rest;
}

std::string pick_dataset(const std::string& flag, const std::map<std::string, std::string>& rest) {
  if (!flag.empty()) return flag;
  auto it = rest.find("dataset");
  if (it == rest.end()) throw config_error("no dataset given (use --dataset or dataset= in the config)");
  return it->second;
}

int pick_frames(int flag, const std::map<std::string, std::string>& rest) {
  if (flag >= 0) return flag;
  auto it = rest.find("frames");
  return it == rest.end() ? -1 : std::stoi(it->second);
}

void write_floats(const fs::path& p, std::span<const float> v) {
  std::vector<std::uint8_t> b;
  b.reserve(4 * v.size());
  for (float x : v) {
    const auto u = std::bit_cast<std::uint32_t>(x);
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  write_file(p, b);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nvv: volumetric video coding with coefficient and basis feature grids"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log per-frame progress");

  // synth
  auto* synth = app.add_subcommand("synth", "Render the blob scene into a multi-view dataset");
  std::string synth_out;
  int synth_frames = 40, synth_views = 20, synth_res = 64, synth_samples = 128, synth_held = 4;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--frames", synth_frames, "Frames")->check(CLI::PositiveNumber);
  synth->add_option("--views", synth_views, "Views on the rig")->check(CLI::Range(2, 99));
  synth->add_option("--res", synth_res, "Image width and height")->check(CLI::PositiveNumber);
  synth->add_option("--oracle-samples", synth_samples, "Quadrature samples per ray")->check(CLI::PositiveNumber);
  synth->add_option("--held-out", synth_held, "Trailing views reserved for testing")->check(CLI::NonNegativeNumber);

  // encode
  auto* encode = app.add_subcommand("encode", "Train and code a sequence");
  std::string enc_config, enc_out, enc_dataset;
  std::vector<std::string> enc_sets;
  int enc_frames = -1;
  encode->add_option("--config", enc_config, "key=value config file")->required()->check(CLI::ExistingFile);
  encode->add_option("--out", enc_out, "Output .nvv file")->required();
  encode->add_option("--dataset", enc_dataset, "Dataset directory (overrides dataset= in the config)");
  encode->add_option("--frames", enc_frames, "Encode only the first N frames");
  encode->add_option("--set", enc_sets, "Override a config key (key=value, repeatable)");

  // decode
  auto* decode = app.add_subcommand("decode", "Decode a stream into raw float32 grids");
  std::string dec_in, dec_out;
  decode->add_option("stream", dec_in, ".nvv file")->required()->check(CLI::ExistingFile);
  decode->add_option("--out-dir", dec_out, "Output directory")->required();

  // render
  auto* render = app.add_subcommand("render", "Render one decoded frame from a dataset view");
  std::string ren_in, ren_dataset, ren_out;
  int ren_frame = 0, ren_view = 0;
  render->add_option("stream", ren_in, ".nvv file")->required()->check(CLI::ExistingFile);
  render->add_option("frame", ren_frame, "Frame index")->required()->check(CLI::NonNegativeNumber);
  render->add_option("view", ren_view, "View index")->required()->check(CLI::NonNegativeNumber);
  render->add_option("--dataset", ren_dataset, "Dataset directory (for the camera)")->required();
  render->add_option("--out", ren_out, "Output PPM")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Decode, render and score a stream against its dataset");
  std::string ev_in, ev_dataset, ev_csv;
  bool ev_check = false;
  double ev_min_train = 29.0, ev_min_test = 26.0;
  eval->add_option("stream", ev_in, ".nvv file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", ev_dataset, "Dataset directory")->required();
  eval->add_option("--csv", ev_csv, "Write the per-frame table here");
  eval->add_flag("--check", ev_check, "Exit 3 unless the PSNR thresholds hold");
  eval->add_option("--min-train", ev_min_train, "Train-view PSNR threshold for --check");
  eval->add_option("--min-test", ev_min_test, "Test-view PSNR threshold for --check");

  // rd
  auto* rd = app.add_subcommand("rd", "Encode at several lambda1 values and write an RD curve");
  std::string rd_config, rd_dataset, rd_out, rd_streams;
  std::vector<double> rd_lambdas{1e-4, 5e-4, 2e-3, 5e-3};
  std::vector<std::string> rd_sets;
  int rd_frames = -1;
  rd->add_option("--config", rd_config, "key=value config file")->required()->check(CLI::ExistingFile);
  rd->add_option("--out", rd_out, "Output CSV")->required();
  rd->add_option("--dataset", rd_dataset, "Dataset directory");
  rd->add_option("--lambdas", rd_lambdas, "lambda1 values")->delimiter(',');
  rd->add_option("--frames", rd_frames, "Encode only the first N frames");
  rd->add_option("--streams", rd_streams, "Keep each stream in this directory");
  rd->add_option("--set", rd_sets, "Override a config key (key=value, repeatable)");

  // bdrate
  auto* bd = app.add_subcommand("bdrate", "Bjontegaard delta rate of curve B against anchor A");
  std::string bd_a, bd_b, bd_metric = "test";
  bd->add_option("anchor", bd_a, "Anchor curve CSV")->required()->check(CLI::ExistingFile);
  bd->add_option("test", bd_b, "Test curve CSV")->required()->check(CLI::ExistingFile);
  bd->add_option("--metric", bd_metric, "PSNR column: train or test")->check(CLI::IsMember({"train", "test"}));

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Baseline / +dynamic / +joint table");
  std::string ab_config, ab_dataset, ab_csv;
  std::vector<std::string> ab_sets;
  int ab_frames = -1;
  ablate->add_option("--config", ab_config, "key=value config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--dataset", ab_dataset, "Dataset directory");
  ablate->add_option("--frames", ab_frames, "Use only the first N frames");
  ablate->add_option("--csv", ab_csv, "Write the table as CSV");
  ablate->add_option("--set", ab_sets, "Override a config key (key=value, repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  set_log_level(verbose ? LogLevel::info : LogLevel::warn);

  try {
    if (*synth) {
      if (synth_held >= synth_views) throw config_error("--held-out must leave at least one training view");
      const auto scene = acceptance_scene(synth_frames);
      const auto ds = synthesize(scene, camera_rig(synth_views, synth_res, synth_res), synth_samples, synth_held);
      write_dataset(ds, synth_out);
      std::cout << "wrote " << synth_frames << " frames x " << synth_views << " views to " << synth_out << '\n';
    } else if (*encode) {
      TrainConfig cfg;
      const auto rest = load_train_config(enc_config, enc_sets, cfg);
      const Dataset ds = load_dataset(pick_dataset(enc_dataset, rest));
      const auto r = encode_dataset(ds, cfg, {}, pick_frames(enc_frames, rest));
      write_file(enc_out, r.bytes);
      std::cout << "wrote " << enc_out << ": " << r.record_bytes.size() << " frames, " << r.bytes.size()
                << " bytes\n";
    } else if (*decode) {
      const auto bytes = read_file(dec_in);
      fs::create_directories(dec_out);
      SequenceDecoder dec(bytes);
      DecodedFrame f;
      std::ofstream index(fs::path(dec_out) / "index.txt");
      index << "frame type bytes\n";
      while (dec.next(f)) {
        const fs::path dir = fs::path(dec_out) / detail::frame_dir(static_cast<int>(f.index));
        fs::create_directories(dir);
        write_floats(dir / "coef.f32", f.fields.coef.values());
        for (std::size_t l = 0; l < f.fields.basis.size(); ++l)
          write_floats(dir / ("basis" + std::to_string(l) + ".f32"), f.fields.basis[l].grid.values());
        write_floats(dir / "mlp.f32", f.fields.mlp.params());
        index << f.index << ' ' << frame_type_char(f.type) << ' ' << f.record_bytes << '\n';
      }
      std::cout << "decoded " << dec.header().frames << " frames into " << dec_out << '\n';
    } else if (*render) {
      const auto bytes = read_file(ren_in);
      const Dataset ds = load_dataset(ren_dataset, false);
      if (ren_view >= ds.manifest.views) throw config_error("view index out of range");
      SequenceDecoder dec(bytes);
      if (ren_frame >= static_cast<int>(dec.header().frames)) throw config_error("frame index out of range");
      DecodedFrame f;
      while (dec.next(f) && static_cast<int>(f.index) < ren_frame) {
      }
      const auto& h = dec.header();
      write_ppm(ren_out, render_image(f.fields, ds.cameras[ren_view], h.samples_per_ray, h.background));
      std::cout << "wrote " << ren_out << '\n';
    } else if (*eval) {
      const auto bytes = read_file(ev_in);
      const Dataset ds = load_dataset(ev_dataset);
      const auto r = eval_sequence(bytes, ds);
      std::printf("%6s %4s %12s %10s %10s\n", "frame", "type", "bits", "train dB", "test dB");
      for (const auto& f : r.frames)
        std::printf("%6u %4c %12zu %10.2f %10.2f\n", f.index, frame_type_char(f.type), f.bits, f.psnr_train,
                    f.psnr_test);
      std::printf("mean bits/frame %.1f  train %.2f dB  test %.2f dB\n\n", r.mean.rate_bits, r.mean.psnr_train,
                  r.mean.psnr_test);
      std::cout << allocation_report(bytes).table();
      if (!ev_csv.empty()) {
        std::ofstream f(ev_csv);
        f << "frame,type,bits,psnr_train,psnr_test\n";
        for (const auto& e : r.frames)
          f << e.index << ',' << frame_type_char(e.type) << ',' << e.bits << ',' << e.psnr_train << ','
            << e.psnr_test << '\n';
      }
      if (ev_check && !(r.mean.psnr_train >= ev_min_train && r.mean.psnr_test >= ev_min_test)) {
        std::cerr << "check failed: need train >= " << ev_min_train << " dB and test >= " << ev_min_test << " dB\n";
        return kExitCheck;
      }
    } else if (*rd) {
      TrainConfig cfg;
      const auto rest = load_train_config(rd_config, rd_sets, cfg);
      const Dataset ds = load_dataset(pick_dataset(rd_dataset, rest));
      RdCurve curve;
      curve.label = fs::path(rd_out).stem().string();
      for (double l : rd_lambdas) {
        TrainConfig c = cfg;
        c.lambda1 = l;
        const auto r = encode_dataset(ds, c, {}, pick_frames(rd_frames, rest));
        if (!rd_streams.empty()) {
          fs::create_directories(rd_streams);
          std::ostringstream name;
          name << "lambda_" << l << ".nvv";
          write_file(fs::path(rd_streams) / name.str(), r.bytes);
        }
        const auto e = eval_sequence(r.bytes, ds);
        curve.points.push_back(e.mean);
        std::printf("lambda1 %-8g bits/frame %10.1f  train %.2f dB  test %.2f dB\n", l, e.mean.rate_bits,
                    e.mean.psnr_train, e.mean.psnr_test);
      }
      write_rd_csv(rd_out, curve);
    } else if (*bd) {
      const double v = bd_rate(read_rd_csv(bd_a), read_rd_csv(bd_b), bd_metric == "train" ? RdMetric::train : RdMetric::test);
      std::printf("BD-rate %+.2f%%\n", v);
    } else if (*ablate) {
      TrainConfig cfg;
      const auto rest = load_train_config(ab_config, ab_sets, cfg);
      const Dataset ds = load_dataset(pick_dataset(ab_dataset, rest));
      const auto rows = ablation_run(ds, cfg, pick_frames(ab_frames, rest));
      std::cout << ablation_table(rows);
      if (!ab_csv.empty()) {
        std::ofstream f(ab_csv);
        f << "row,bits_per_frame,psnr_train,psnr_test\n";
        for (const auto& r : rows)
          f << r.label << ',' << r.point.rate_bits << ',' << r.point.psnr_train << ',' << r.point.psnr_test << '\n';
      }
    }
  } catch (const format_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return 0;
}
