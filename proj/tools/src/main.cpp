#include <exception>
#include <functional>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "run_config.hpp"

namespace {

using namespace tba::cli;

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--samples", f.samples, "Fitting samples (clamped to the dataset size)")->capture_default_str();
  cmd->add_option("--seed", f.seed, "Sampling and training seed")->capture_default_str();
  cmd->add_flag("--bias", f.bias, "Fit an affine map x T + b");
  cmd->add_option("--rcond", f.rcond, "Relative eigenvalue cutoff of the pseudo-inverse")->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainFlags& t, const std::string& batch_flag) {
  cmd->add_option("--steps", t.steps, "Adam steps for mlp/resmlp")->capture_default_str();
  cmd->add_option("--lr", t.lr, "Adam learning rate for mlp/resmlp")->capture_default_str();
  cmd->add_option(batch_flag, t.batch, "Rows per mini-batch for mlp/resmlp")->capture_default_str();
  cmd->add_option("--dropout-p", t.dropout_p, "Res-MLP dropout probability")->capture_default_str();
}

void add_probe_flags(CLI::App* cmd, ProbeFlags& p, const std::string& prefix) {
  cmd->add_option("--seeds", p.seeds, "Probe seeds, comma separated")->delimiter(',')->capture_default_str();
  cmd->add_option("--" + prefix + "epochs", p.epochs, "Probe epochs")->capture_default_str();
  cmd->add_option("--" + prefix + "lr", p.lr, "Probe learning rate")->capture_default_str();
  cmd->add_option("--" + prefix + "batch", p.batch, "Probe batch size")->capture_default_str();
  cmd->add_option("--probe-feature", p.feature, "Probe input: cls or mean")
      ->check(CLI::IsMember({"cls", "mean"}))
      ->capture_default_str();
  cmd->add_flag("--no-final-norm", p.no_final_norm, "Feed the probe block outputs without the final norm");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locate and replace redundant transformer blocks with fitted linear maps"};
  app.require_subcommand(1);
  IngestFlags ingest;
  app.add_option("--norm-mean", ingest.norm_mean, "Per-channel mean applied to IDX images")->capture_default_str();
  app.add_option("--norm-std", ingest.norm_std, "Per-channel std applied to IDX images")->capture_default_str();

  std::function<void()> action;
  const auto reduces = CLI::IsMember({"mean", "cls", "all"});

  SynthOptions synth;
  auto* c = app.add_subcommand("synth", "Write a planted model and class-conditional datasets");
  c->add_option("-o,--out", synth.out, "Output directory")->required();
  c->add_option("--blocks", synth.blocks)->capture_default_str();
  c->add_option("--dim", synth.dim)->capture_default_str();
  c->add_option("--heads", synth.heads)->capture_default_str();
  c->add_option("--mlp-hidden", synth.mlp_hidden)->capture_default_str();
  c->add_option("--image-size", synth.image_size)->capture_default_str();
  c->add_option("--patch", synth.patch)->capture_default_str();
  c->add_option("--channels", synth.channels)->capture_default_str();
  c->add_option("--plant", synth.plants, "kind:s:e with kind identity|linear|affine|gelu (repeatable)");
  c->add_option("--noise-scale", synth.noise_scale, "Scale of the random block writes")->capture_default_str();
  c->add_option("--strength", synth.strength, "Scale of A - I for linear plants")->capture_default_str();
  c->add_option("--gelu-width", synth.gelu_width)->capture_default_str();
  c->add_option("--gelu-scale", synth.gelu_scale)->capture_default_str();
  c->add_option("--seed", synth.seed, "Model seed")->capture_default_str();
  c->add_option("--classes", synth.classes)->capture_default_str();
  c->add_option("--per-class", synth.per_class, "Training samples per class")->capture_default_str();
  c->add_option("--test-per-class", synth.test_per_class)->capture_default_str();
  c->add_option("--margin", synth.margin, "Class mean separation in noise units")->capture_default_str();
  c->add_option("--data-noise", synth.data_noise)->capture_default_str();
  c->add_option("--shift", synth.shift, "Translation applied to every class mean")->capture_default_str();
  c->add_option("--data-seed", synth.data_seed)->capture_default_str();
  c->callback([&] { action = [&] { cmd_synth(synth); }; });

  CaptureCmdOptions cap;
  c = app.add_subcommand("capture", "Record per-block outputs on a data sample");
  c->add_option("-o,--out", cap.out)->required();
  c->add_option("--model", cap.model)->required();
  c->add_option("--data", cap.data)->required();
  c->add_option("--samples", cap.samples)->capture_default_str();
  c->add_option("--seed", cap.seed)->capture_default_str();
  c->add_option("--reduce", cap.reduce)->check(reduces)->capture_default_str();
  c->add_flag("--exclude-cls", cap.exclude_cls, "Leave the CLS token out of the token mean");
  c->add_option("--blocks", cap.blocks, "0-based blocks to record (default all)")->delimiter(',');
  c->callback([&] { action = [&] { cmd_capture(cap, ingest); }; });

  IdentifyOptions ident;
  c = app.add_subcommand("identify", "Block similarity matrix and ranked candidate spans");
  c->add_option("-o,--out", ident.out)->required();
  c->add_option("--model", ident.model)->required();
  c->add_option("--data", ident.data);
  c->add_option("--activations", ident.activations, "Use a saved capture instead of --data");
  c->add_option("--samples", ident.samples)->capture_default_str();
  c->add_option("--seed", ident.seed)->capture_default_str();
  c->add_option("--reduce", ident.reduce)->check(reduces)->capture_default_str();
  c->add_flag("--exclude-cls", ident.exclude_cls);
  c->add_option("--metric", ident.metric)->check(CLI::IsMember({"mse", "cosine", "cka"}))->capture_default_str();
  c->add_option("--max-span", ident.max_span, "Longest span e - s to rank (0 = any)")->capture_default_str();
  c->add_option("--top-k", ident.top_k)->capture_default_str();
  c->add_option("--replacement", ident.replacement, "Approximator whose cost offsets params_saved")
      ->check(CLI::IsMember({"identity", "linear", "mlp", "resmlp"}))
      ->capture_default_str();
  c->callback([&] { action = [&] { cmd_identify(ident, ingest); }; });

  FitCmdOptions fit;
  c = app.add_subcommand("fit", "Fit approximators for spans");
  c->add_option("-o,--out", fit.out)->required();
  c->add_option("--model", fit.model)->required();
  c->add_option("--data", fit.data)->required();
  c->add_option("--span,--spans", fit.spans, "s:e[,s:e...] with 0-based block indices")->required();
  c->add_option("--approximator", fit.approximator)
      ->check(CLI::IsMember({"linear", "identity", "mlp", "resmlp"}))
      ->capture_default_str();
  add_fit_flags(c, fit.fit);
  add_train_flags(c, fit.train, "--batch");
  c->callback([&] { action = [&] { cmd_fit(fit, ingest); }; });

  PatchOptions patch;
  c = app.add_subcommand("patch", "Apply approximators and report parameters and drift");
  c->add_option("-o,--out", patch.out)->required();
  c->add_option("--model", patch.model)->required();
  c->add_option("--approx", patch.approx, "Approximator files (repeatable)")->required();
  c->add_option("--data", patch.data, "Measure final-layer drift on this data");
  c->add_option("--samples", patch.samples)->capture_default_str();
  c->add_option("--seed", patch.seed)->capture_default_str();
  c->add_option("--reduce", patch.reduce)->check(CLI::IsMember({"mean", "cls"}))->capture_default_str();
  c->add_flag("--final-norm", patch.final_norm, "Compare after the final norm");
  c->callback([&] { action = [&] { cmd_patch(patch, ingest); }; });

  EvalOptions ev;
  c = app.add_subcommand("eval", "Linear-probe accuracy of the original and patched encoder");
  c->add_option("-o,--out", ev.out)->required();
  c->add_option("--model", ev.model)->required();
  c->add_option("--train", ev.train)->required();
  c->add_option("--test", ev.test)->required();
  c->add_option("--approx", ev.approx, "Approximator files (repeatable)");
  add_probe_flags(c, ev.probe, "");
  c->callback([&] { action = [&] { cmd_eval(ev, ingest); }; });

  GeneralizeOptions gen;
  c = app.add_subcommand("generalize", "Fit on one dataset, evaluate on another");
  c->add_option("-o,--out", gen.out)->required();
  c->add_option("--model", gen.model)->required();
  c->add_option("--fit-data", gen.fit_data)->required();
  c->add_option("--train", gen.train)->required();
  c->add_option("--test", gen.test)->required();
  c->add_option("--span", gen.span)->required();
  add_fit_flags(c, gen.fit);
  add_probe_flags(c, gen.probe, "");
  c->callback([&] { action = [&] { cmd_generalize(gen, ingest); }; });

  DriftOptions drift;
  c = app.add_subcommand("drift", "Final-layer drift of every single-block span");
  c->add_option("-o,--out", drift.out)->required();
  c->add_option("--model", drift.model)->required();
  c->add_option("--data", drift.data, "Fitting data")->required();
  c->add_option("--eval-data", drift.eval_data, "Drift data (default: --data)");
  add_fit_flags(c, drift.fit);
  c->add_option("--eval-samples", drift.eval_samples)->capture_default_str();
  c->add_option("--reduce", drift.reduce)->check(CLI::IsMember({"mean", "cls"}))->capture_default_str();
  c->add_flag("--final-norm", drift.final_norm);
  c->callback([&] { action = [&] { cmd_drift(drift, ingest); }; });

  PcaOptions pca;
  c = app.add_subcommand("pca", "Project original and patched features on shared principal axes");
  c->add_option("-o,--out", pca.out)->required();
  c->add_option("--model", pca.model)->required();
  c->add_option("--data", pca.data)->required();
  c->add_option("--approx", pca.approx)->required();
  c->add_option("--samples", pca.samples)->capture_default_str();
  c->add_option("--seed", pca.seed)->capture_default_str();
  c->add_option("-k,--components", pca.k)->capture_default_str();
  c->add_option("--probe-feature", pca.feature)->check(CLI::IsMember({"cls", "mean"}))->capture_default_str();
  c->add_flag("--no-final-norm", pca.no_final_norm);
  c->callback([&] { action = [&] { cmd_pca(pca, ingest); }; });

  CompareOptions cmp;
  c = app.add_subcommand("compare", "TBA, skipping and trained approximators on the same spans");
  c->add_option("-o,--out", cmp.out)->required();
  c->add_option("--model", cmp.model)->required();
  c->add_option("--data", cmp.data, "Fitting and drift data")->required();
  c->add_option("--train", cmp.train, "Probe training data (enables accuracy columns)");
  c->add_option("--test", cmp.test, "Probe test data");
  c->add_option("--span,--spans", cmp.spans)->required();
  c->add_option("--methods", cmp.methods)->delimiter(',')->capture_default_str();
  add_fit_flags(c, cmp.fit);
  add_train_flags(c, cmp.train_flags, "--batch");
  c->add_option("--eval-samples", cmp.eval_samples)->capture_default_str();
  c->add_option("--reduce", cmp.reduce)->check(CLI::IsMember({"mean", "cls"}))->capture_default_str();
  c->add_flag("--final-norm", cmp.final_norm);
  add_probe_flags(c, cmp.probe, "probe-");
  c->callback([&] { action = [&] { cmd_compare(cmp, ingest); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    action();
  } catch (const std::exception& e) {
    std::cerr << "tba: error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}
