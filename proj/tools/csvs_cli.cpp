// csvs: train, synthesize, evaluate and generate corpora.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "csvs/checkpoint.hpp"
#include "csvs/corpus.hpp"
#include "csvs/error.hpp"
#include "csvs/pipeline.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw csvs::DataError(fmt::format("cannot open {}", path));
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

const char* dim_name(const csvs::AcousticLayout& l, std::size_t d, std::string& buf) {
  if (d < l.mgc) buf = fmt::format("mgc[{}]", d);
  else if (d == l.lf0()) buf = "lf0diff";
  else if (d < l.vib_amp()) buf = fmt::format("ap[{}]", d - l.ap_begin());
  else if (d == l.vib_amp()) buf = "vib_amp";
  else if (d == l.vib_freq()) buf = "vib_freq";
  else if (d == l.f0_flag()) buf = "f0_flag";
  else buf = "vib_flag";
  return buf.c_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional singing voice synthesis"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a proposed or baseline model");
  std::string corpus_spec, config_path, mode, out_path;
  std::optional<std::size_t> epochs;
  std::size_t mgc = 50, ap = 22;
  train->add_option("--corpus", corpus_spec, "corpus directory or synthetic:seed,n,frames")->required();
  train->add_option("--config", config_path, "JSON training config");
  train->add_option("--mode", mode, "proposed or baseline (overrides the config)")
      ->check(CLI::IsMember({"proposed", "baseline"}));
  train->add_option("--out", out_path, "checkpoint to write")->required();
  train->add_option("--epochs", epochs, "override the configured epoch count");
  train->add_option("--mgc", mgc, "mel-cepstral order + 1 for synthetic corpora");
  train->add_option("--ap", ap, "aperiodicity bands for synthetic corpora");

  auto* synth = app.add_subcommand("synthesize", "render a score to a WAV file");
  std::string ckpt_path, score_path, wav_path, dump_path;
  csvs::SynthesisOptions synth_opts;
  synth->add_option("--ckpt", ckpt_path)->required();
  synth->add_option("--score", score_path)->required();
  synth->add_option("--out", wav_path)->required();
  synth->add_option("--dump-features", dump_path, "write the generated features as a matrix file");
  synth->add_option("--segment-frames", synth_opts.generation.segment_frames);
  synth->add_option("--overlap-frames", synth_opts.generation.overlap_frames);
  synth->add_option("--sample-rate", synth_opts.sample_rate);
  synth->add_option("--alpha", synth_opts.alpha, "frequency warping");
  synth->add_option("--seed", synth_opts.noise_seed, "noise excitation seed");

  auto* eval = app.add_subcommand("eval", "per-dimension RMS and NLL on a corpus");
  std::string eval_ckpt, eval_corpus;
  eval->add_option("--ckpt", eval_ckpt)->required();
  eval->add_option("--corpus", eval_corpus, "corpus directory or synthetic:seed,n,frames")->required();

  auto* make = app.add_subcommand("make-corpus", "write a synthetic corpus directory");
  std::uint64_t seed = 1;
  std::size_t songs = 2, frames = 1200;
  std::string corpus_out;
  make->add_option("--seed", seed)->required();
  make->add_option("--songs", songs)->required();
  make->add_option("--frames", frames)->required();
  make->add_option("--out", corpus_out)->required();
  make->add_option("--mgc", mgc);
  make->add_option("--ap", ap);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) {
      csvs::TrainConfig cfg = config_path.empty() ? csvs::TrainConfig{} : csvs::load_train_config(config_path);
      if (!mode.empty()) cfg.mode = mode == "proposed" ? csvs::ModelKind::proposed : csvs::ModelKind::baseline;
      if (epochs) cfg.epochs = *epochs;
      const csvs::Corpus corpus = csvs::resolve_corpus(corpus_spec, {mgc, ap});
      const csvs::TrainResult result = csvs::train(corpus, cfg, [](std::size_t epoch, double loss) {
        fmt::print("epoch {} loss {:.17g}\n", epoch, loss);
        std::fflush(stdout);
      });
      csvs::save_checkpoint(result.checkpoint, out_path);
    } else if (*synth) {
      const csvs::ModelCheckpoint ckpt = csvs::load_checkpoint(ckpt_path);
      const csvs::Score score = csvs::parse_score(read_file(score_path));
      const csvs::SynthesisResult r = csvs::synthesize(ckpt, score, synth_opts);
      csvs::write_wav(r.waveform, wav_path);
      if (!dump_path.empty()) csvs::write_feature_matrix(r.prediction.features, dump_path);
      fmt::print("wrote {} samples at {} Hz to {}\n", r.waveform.samples.size(), r.waveform.sample_rate, wav_path);
    } else if (*eval) {
      const csvs::ModelCheckpoint ckpt = csvs::load_checkpoint(eval_ckpt);
      const csvs::Corpus corpus = csvs::resolve_corpus(eval_corpus, ckpt.layout);
      const csvs::EvalReport report = csvs::evaluate(ckpt, corpus);
      std::string buf;
      for (std::size_t d = 0; d < report.rms.size(); ++d)
        fmt::print("rms {} {:.9g}\n", dim_name(ckpt.layout, d, buf), report.rms[d]);
      fmt::print("nll_per_frame {:.9g}\n", report.nll);
    } else if (*make) {
      csvs::save_corpus(csvs::make_synthetic_corpus(seed, songs, frames, {mgc, ap}), corpus_out);
    }
  } catch (const csvs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const csvs::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const csvs::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
