// mdet: data generation, training, evaluation and sweeps for the mention
// detectors.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "mdet/corpus.hpp"
#include "mdet/harness.hpp"
#include "mdet/kv.hpp"

namespace {

using KV = std::map<std::string, std::string>;

struct RunFlags {
  std::string config;
  std::string model, loss_mode;
  std::optional<double> w, rho, tau;
  std::optional<int> beam, epochs;
  std::optional<bool> multitask;
  std::optional<std::uint64_t> seed;
  std::string train, dev, out;

  void attach(CLI::App* app, bool with_paths) {
    app->add_option("--config", config, "key = value run configuration file");
    app->add_option("--model", model, "tagger or span")->check(CLI::IsMember({"tagger", "span"}));
    app->add_option("--loss-mode", loss_mode, "plain, weighted or soft")
        ->check(CLI::IsMember({"plain", "weighted", "soft"}));
    app->add_option("--w", w, "negative weight for the weighted loss");
    app->add_option("--rho", rho, "positive prior for the soft-target loss");
    app->add_option("--tau", tau, "span detection threshold");
    app->add_option("--beam", beam, "tagger beam width");
    app->add_option("--multitask", multitask, "train with the coreference head (true/false)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--epochs", epochs, "training epochs");
    if (with_paths) {
      app->add_option("--train", train, "training corpus");
      app->add_option("--dev", dev, "development corpus for model selection");
      app->add_option("--out", out, "output directory");
    }
  }

  KV resolve() const {
    KV kv = config.empty() ? KV{} : mdet::load_kv(config);
    auto set = [&](const char* k, const std::string& v) {
      if (!v.empty()) kv[k] = v;
    };
    set("model", model);
    set("loss_mode", loss_mode);
    if (w) kv["w"] = mdet::format_double(*w);
    if (rho) kv["rho"] = mdet::format_double(*rho);
    if (tau) kv["tau"] = mdet::format_double(*tau);
    if (beam) kv["beam"] = std::to_string(*beam);
    if (epochs) kv["epochs"] = std::to_string(*epochs);
    if (multitask) kv["multitask"] = *multitask ? "true" : "false";
    if (seed) kv["seed"] = std::to_string(*seed);
    set("train", train);
    set("dev", dev);
    set("output_dir", out);
    return kv;
  }
};

void print_epoch(const mdet::EpochRecord& e) {
  std::fprintf(stderr, "epoch %d  loss %.5f", e.epoch, e.combined_loss);
  if (e.evaluated) std::fprintf(stderr, "  dev mention F1 %.2f", 100 * e.dev_mention.f1);
  std::fprintf(stderr, "%s\n", e.selected ? "  *" : "");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mention detection with partial annotation and multitask coreference"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic, fully annotated corpus");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  std::optional<int> gen_docs;
  std::optional<double> gen_q;
  gen->add_option("--config", gen_config, "generator configuration file");
  gen->add_option("--seed", gen_seed, "random seed")->required();
  gen->add_option("--num-docs", gen_docs, "number of documents");
  gen->add_option("--nesting", gen_q, "nesting probability q");
  gen->add_option("--out", gen_out, "output corpus")->required();

  // partialize
  auto* part = app.add_subcommand("partialize", "drop annotation to simulate chain-only data");
  std::string part_in, part_out;
  mdet::PartialPolicy policy;
  bool keep_singletons = false, keep_broken = false;
  part->add_option("--in", part_in, "fully annotated corpus")->required();
  part->add_option("--out", part_out, "partial corpus")->required();
  part->add_option("--drop-rate", policy.drop_rate, "probability of dropping each remaining mention");
  part->add_flag("--keep-singletons", keep_singletons, "do not drop cluster-less mentions");
  part->add_flag("--keep-broken-chains", keep_broken, "keep the survivor of a chain reduced to one mention");
  part->add_option("--seed", policy.seed, "random seed")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a detector (optionally with the coreference head)");
  RunFlags train_flags;
  train_flags.attach(tr, true);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against a gold corpus");
  std::string ev_ckpt, ev_corpus;
  std::optional<double> ev_tau;
  std::optional<int> ev_beam;
  bool ev_sweep = false, ev_kv = false;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--corpus", ev_corpus, "gold corpus")->required();
  ev->add_option("--tau", ev_tau, "span detection threshold");
  ev->add_option("--beam", ev_beam, "tagger beam width");
  ev->add_flag("--sweep-tau", ev_sweep, "span model: report tau = 0.1 .. 0.9");
  ev->add_flag("--kv", ev_kv, "key=value output");

  // decode
  auto* dec = app.add_subcommand("decode", "print one line per sentence (tags, spans); optionally write a corpus");
  std::string dec_ckpt, dec_corpus, dec_out, dec_scores;
  std::optional<double> dec_tau;
  std::optional<int> dec_beam;
  dec->add_option("--checkpoint", dec_ckpt, "model checkpoint")->required();
  dec->add_option("--corpus", dec_corpus, "input corpus")->required();
  dec->add_option("--out", dec_out, "write predicted mentions and clusters as a corpus");
  dec->add_option("--scores", dec_scores, "span model: TSV of every span's probability and gold label");
  dec->add_option("--tau", dec_tau, "span detection threshold");
  dec->add_option("--beam", dec_beam, "tagger beam width");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train over a loss grid and evaluate every threshold");
  RunFlags sweep_flags;
  sweep_flags.attach(sw, true);
  std::string sw_eval, sw_out;
  sw->add_option("--eval", sw_eval, "evaluation corpus (full gold)")->required();
  sw->add_option("--tsv", sw_out, "output TSV (default stdout)");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks on tiny models");
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-3;
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--tolerance", gc_tol, "maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      mdet::GeneratorConfig cfg = gen_config.empty() ? mdet::GeneratorConfig{}
                                                     : mdet::GeneratorConfig::from_kv(mdet::load_kv(gen_config));
      if (gen_docs) cfg.num_docs = *gen_docs;
      if (gen_q) cfg.nesting_prob = *gen_q;
      mdet::save_corpus(mdet::synth_generate(cfg, gen_seed), gen_out);
    } else if (*part) {
      policy.drop_singletons = !keep_singletons;
      policy.collapse_broken_chains = !keep_broken;
      const auto result = mdet::partialize(mdet::load_corpus(part_in), policy);
      mdet::save_corpus(result.partial, part_out);
    } else if (*tr) {
      const mdet::RunConfig cfg = mdet::RunConfig::from_kv(train_flags.resolve());
      const auto result = mdet::train_to_directory(cfg, {true, print_epoch});
      mdet::write_report(std::cout, result.final_dev);
    } else if (*ev) {
      const auto model = mdet::load_checkpoint(ev_ckpt);
      const mdet::Corpus corpus = mdet::load_corpus(ev_corpus);
      if (ev_sweep) {
        const auto curve = mdet::mention_curve(*model, corpus, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
        std::cout << "tau\trecall\tprecision\tf1\n";
        for (const auto& [tau, p] : curve) std::printf("%.2f\t%.4f\t%.4f\t%.4f\n", tau, p.recall, p.precision, p.f1);
      } else {
        const mdet::EvalOptions opts{ev_tau.value_or(model->config().loss.tau),
                                     ev_beam.value_or(model->config().loss.beam), true};
        const auto report = mdet::evaluate(*model, corpus, opts);
        if (ev_kv) mdet::write_report_kv(std::cout, report);
        else mdet::write_report(std::cout, report);
      }
    } else if (*dec) {
      const auto model = mdet::load_checkpoint(dec_ckpt);
      const mdet::EvalOptions opts{dec_tau.value_or(model->config().loss.tau),
                                   dec_beam.value_or(model->config().loss.beam), true};
      const mdet::Corpus corpus = mdet::load_corpus(dec_corpus);
      const mdet::Corpus decoded = mdet::decode_corpus(*model, corpus, opts);
      mdet::write_decoded_lines(std::cout, decoded, model->config().depth_cap);
      if (!dec_out.empty()) mdet::save_corpus(decoded, dec_out);
      if (!dec_scores.empty()) {
        std::ofstream out(dec_scores);
        mdet::write_span_scores(out, *model, corpus);
      }
    } else if (*sw) {
      const KV kv = sweep_flags.resolve();
      mdet::RunConfig cfg = mdet::RunConfig::from_kv(kv);
      cfg.check(true);
      const mdet::SweepGrid grid = mdet::SweepGrid::from_kv(kv);
      const mdet::Corpus train_corpus = mdet::load_corpus(cfg.train_path);
      std::optional<mdet::Corpus> dev;
      if (!cfg.dev_path.empty()) dev = mdet::load_corpus(cfg.dev_path);
      const mdet::Corpus eval_corpus = mdet::load_corpus(sw_eval);
      const auto rows = mdet::sweep(cfg, grid, train_corpus, dev ? &*dev : nullptr, eval_corpus);
      if (sw_out.empty()) {
        mdet::write_sweep_tsv(std::cout, rows);
      } else {
        std::ofstream out(sw_out);
        mdet::write_sweep_tsv(out, rows);
      }
    } else if (*gc) {
      bool ok = true;
      for (const auto& c : mdet::gradient_suite(gc_seed)) {
        const bool pass = c.max_rel_error < gc_tol;
        ok = ok && pass;
        std::printf("%-22s max rel error %.3e over %zu values (worst: %s)  %s\n", c.name.c_str(), c.max_rel_error,
                    c.checked, c.worst_param.c_str(), pass ? "ok" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
