#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <string>

#include "run_config.hpp"
#include "tba/approx.hpp"
#include "tba/approximators.hpp"
#include "tba/capture.hpp"
#include "tba/container.hpp"
#include "tba/csv.hpp"
#include "tba/dataset.hpp"
#include "tba/error.hpp"
#include "tba/eval.hpp"
#include "tba/model.hpp"
#include "tba/similarity.hpp"
#include "tba/synth.hpp"

namespace tba::cli {
namespace {

using nlohmann::json;

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string str(const Path& p) { return p.string(); }

void require_path(const Path& p, const std::string& flag) {
  if (p.empty()) throw ArgumentError(flag + " is required");
}

// Leading bytes of a file, or fewer if it is short.
std::vector<std::uint8_t> head_bytes(const Path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  bytes.resize(static_cast<std::size_t>(in.gcount()));
  return bytes;
}

bool is_idx_images(const std::vector<std::uint8_t>& head) {
  return head.size() >= 4 && head[0] == 0 && head[1] == 0 && head[2] == 0x08 && head[3] == 3;
}

// MNIST-family naming: "...-images-idx3-ubyte" pairs with "...-labels-idx1-ubyte".
Path idx_labels_for(const Path& images) {
  std::string name = images.filename().string();
  const std::pair<std::string, std::string> swaps[] = {{"images-idx3", "labels-idx1"},
                                                       {"images.idx3", "labels.idx1"}};
  for (const auto& [from, to] : swaps) {
    const auto pos = name.find(from);
    if (pos != std::string::npos) {
      name.replace(pos, from.size(), to);
      return images.parent_path() / name;
    }
  }
  throw ArgumentError("cannot derive the labels file for IDX images '" + images.string() +
                      "'; pass 'images,labels'");
}

// Accepts a dataset container, an IDX images file with its labels file next
// to it, or an explicit "images,labels" IDX pair. IDX data and containers
// whose image size differs from the model are resized to fit it.
Dataset load_data(const std::string& spec, const std::string& role, const ModelConfig& config,
                  const IngestFlags& ingest_flags, RunRecord& run) {
  if (spec.empty()) throw ArgumentError("--" + role + " is required");
  const auto parts = split(spec, ',');
  if (parts.size() > 2) throw ArgumentError("--" + role + ": expected a file or 'images,labels'");
  const Path first = parts[0];
  const auto head = head_bytes(first, 8);
  if (parts.size() == 1 && head.size() == 8 && std::equal(head.begin(), head.end(), kContainerMagic)) {
    run.add_input(role, first);
    Dataset ds = load_dataset(first);
    if (ds.images.dim(1) == config.image_size && ds.images.dim(2) == config.image_size &&
        ds.images.dim(3) == config.channels) {
      return ds;
    }
    return ingest(ds, config, Normalization::identity(ds.images.dim(3)));
  }
  if (!is_idx_images(head)) {
    throw BadMagicError(first.string() + ": neither a tensor container nor IDX images");
  }
  const Path labels = parts.size() == 2 ? Path(parts[1]) : idx_labels_for(first);
  run.add_input(role, first);
  run.add_input(role + "_labels", labels);
  const Dataset raw = load_idx_dataset(first, labels, first.stem().string(), role);
  Normalization norm{std::vector<double>(config.channels, ingest_flags.norm_mean),
                     std::vector<double>(config.channels, ingest_flags.norm_std)};
  return ingest(raw, config, norm);
}

TransformerModel open_model(const Path& path, RunRecord& run) {
  require_path(path, "--model");
  run.add_input("model", path);
  return load_model(path);
}

// Spans in "s:e[,s:e...]" notation, checked against the model and for overlap.
std::vector<Span> parse_spans(const std::string& text, std::size_t num_blocks) {
  if (text.empty()) throw ArgumentError("--spans is required");
  std::vector<Span> spans;
  for (const auto& part : split(text, ',')) {
    Span span;
    try {
      span = parse_span(part);
    } catch (const Error& e) {
      throw ArgumentError(std::string("--spans: ") + e.what());
    }
    check_span(span, num_blocks);
    spans.push_back(span);
  }
  std::vector<Span> sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const Span& a, const Span& b) { return a.s < b.s; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1].e >= sorted[i].s) {
      throw PlanError("--spans: " + format_span(sorted[i - 1]) + " and " + format_span(sorted[i]) + " overlap");
    }
  }
  return spans;
}

std::string span_file_name(const Span& span) {
  std::string name = format_span(span);
  std::replace(name.begin(), name.end(), ':', '_');
  return "approx_" + name + ".ntc";
}

ApproxPlan open_plan(const std::vector<Path>& files, const TransformerModel& model, RunRecord& run) {
  std::vector<PlanEntry> entries;
  for (const auto& f : files) {
    run.add_input("approximator", f);
    StoredApproximator stored = load_approximator(f);
    entries.push_back({stored.span, std::move(stored.approx)});
  }
  std::sort(entries.begin(), entries.end(),
            [](const PlanEntry& a, const PlanEntry& b) { return a.span.s < b.span.s; });
  ApproxPlan plan(std::move(entries));
  plan.validate(model.num_blocks(), model.config().d_model);
  return plan;
}

FeatureOptions probe_features(const ProbeFlags& p) {
  FeatureOptions f;
  if (p.feature != "cls" && p.feature != "mean") {
    throw ArgumentError("--probe-feature must be cls or mean, got '" + p.feature + "'");
  }
  f.reduce = parse_reduce(p.feature);
  f.final_norm = !p.no_final_norm;
  return f;
}

ProbeConfig probe_config(const ProbeFlags& p) {
  ProbeConfig cfg;
  cfg.epochs = p.epochs;
  cfg.lr = p.lr;
  cfg.batch = p.batch;
  cfg.features = probe_features(p);
  if (p.seeds.empty()) throw ArgumentError("--seeds needs at least one seed");
  return cfg;
}

json probe_json(const ProbeFlags& p) {
  return {{"seeds", p.seeds},     {"epochs", p.epochs},   {"lr", p.lr},
          {"batch", p.batch},     {"feature", p.feature}, {"final_norm", !p.no_final_norm}};
}

json fit_json(const FitFlags& f) {
  return {{"samples", f.samples}, {"seed", f.seed}, {"bias", f.bias}, {"rcond", f.rcond}};
}

json train_json(const TrainFlags& t) {
  return {{"steps", t.steps}, {"lr", t.lr}, {"batch", t.batch}, {"dropout_p", t.dropout_p}};
}

json ingest_json(const IngestFlags& i) { return {{"norm_mean", i.norm_mean}, {"norm_std", i.norm_std}}; }

json summary_json(const EvalSummary& s) {
  std::vector<double> accs;
  for (const auto& r : s.runs) accs.push_back(r.accuracy);
  return {{"mean", s.mean}, {"std", s.stddev}, {"accuracies", accs}};
}

// Per-token activations of blocks s and e on a sample of the fitting data.
struct SpanRows {
  Tensor xs, xe;
  std::size_t samples = 0;
};

SpanRows span_rows(const TransformerModel& model, const Dataset& data, const Span& span, const FitFlags& fit) {
  check_span(span, model.num_blocks());
  const std::size_t n = std::min(fit.samples, data.size());
  CaptureOptions opts;
  opts.reduce = Reduce::kAll;
  opts.blocks = {span.s, span.e};
  const ActivationSet acts = capture(model, data, sample_subset(data, n, fit.seed), opts);
  return {acts.block(span.s), acts.block(span.e), n};
}

struct FittedApprox {
  Approximator approx;
  double residual = 0.0;  // mean squared row error on the fitting rows
  json info = json::object();
};

FittedApprox fit_method(const std::string& method, const SpanRows& rows, const Span& span, const FitFlags& fit,
                        const TrainFlags& train, const std::string& source_fingerprint) {
  const std::size_t d = rows.xs.cols();
  const double n = static_cast<double>(rows.xs.rows());
  if (method == "linear" || method == "tba") {
    LinearMap map = fit_linear(rows.xs, rows.xe, fit.bias, fit.rcond);
    map.span = span;
    map.source_fingerprint = source_fingerprint;
    const double residual = map.residual;
    return {Approximator(std::move(map)), residual, json::object()};
  }
  if (method == "identity" || method == "skipat") {
    return {Approximator(IdentityMap{}), residual_total(rows.xs, rows.xe, rows.xs) / n,
            {{"rows", rows.xs.rows()}}};
  }
  std::shared_ptr<TrainableApprox> net;
  Rng init(fit.seed);
  if (method == "mlp") {
    net = std::make_shared<MlpApprox>(d, d, init);
  } else if (method == "resmlp") {
    net = std::make_shared<ResMlpApprox>(d, train.dropout_p, init);
  } else {
    throw ArgumentError("unknown approximator '" + method + "' (linear, identity, mlp, resmlp)");
  }
  TrainOptions opts;
  opts.steps = train.steps;
  opts.lr = train.lr;
  opts.batch_rows = train.batch;
  opts.seed = fit.seed;
  const TrainReport report = train_approximator(*net, rows.xs, rows.xe, opts);
  json info = {{"rows", rows.xs.rows()},
               {"steps", train.steps},
               {"lr", train.lr},
               {"batch", train.batch},
               {"seed", fit.seed},
               {"initial_loss", report.initial_loss},
               {"residual", report.final_loss},
               {"source_fingerprint", source_fingerprint}};
  return {Approximator(std::shared_ptr<const TrainableApprox>(net)), report.final_loss, info};
}

std::uint64_t span_block_params(const TransformerModel& model, const Span& span) {
  return count_block_params(model.config()) * span.length();
}

}  // namespace

void cmd_synth(const SynthOptions& o) {
  require_path(o.out, "--out");
  RunRecord run("synth", o.out);
  PlantSpec spec;
  spec.base.image_size = o.image_size;
  spec.base.patch_size = o.patch;
  spec.base.channels = o.channels;
  spec.base.d_model = o.dim;
  spec.base.num_blocks = o.blocks;
  spec.base.num_heads = o.heads;
  spec.base.mlp_hidden = o.mlp_hidden;
  spec.noise_scale = o.noise_scale;
  spec.seed = o.seed;
  for (const auto& text : o.plants) {
    PlantedSpan plant = parse_plant(text);
    plant.strength = o.strength;
    plant.gelu_width = o.gelu_width;
    plant.gelu_scale = o.gelu_scale;
    spec.plants.push_back(plant);
  }
  run.config() = {{"blocks", o.blocks},         {"dim", o.dim},
                  {"heads", o.heads},           {"mlp_hidden", o.mlp_hidden},
                  {"image_size", o.image_size}, {"patch", o.patch},
                  {"channels", o.channels},     {"plants", o.plants},
                  {"noise_scale", o.noise_scale}, {"strength", o.strength},
                  {"gelu_width", o.gelu_width}, {"gelu_scale", o.gelu_scale},
                  {"seed", o.seed},             {"classes", o.classes},
                  {"per_class", o.per_class},   {"test_per_class", o.test_per_class},
                  {"margin", o.margin},         {"data_noise", o.data_noise},
                  {"shift", o.shift},           {"data_seed", o.data_seed},
                  {"out", str(o.out)}};

  const PlantedModel planted = make_planted(spec);
  const auto model_path = run.output("model.ntc");
  save_model(planted.model, model_path);
  run.add_output(model_path);

  json plants = json::array();
  for (std::size_t i = 0; i < planted.maps.size(); ++i) {
    const PlantedMap& m = planted.maps[i];
    json entry = {{"kind", to_string(m.kind)}, {"span", format_span(m.span)}, {"s", m.span.s}, {"e", m.span.e}};
    if (!m.a.empty()) {
      Container c;
      c.tensors["A"] = m.a;
      if (!m.b.empty()) c.tensors["b"] = m.b;
      c.documents["__meta__"] = entry;
      const auto path = run.output("plant_" + std::to_string(i) + ".ntc");
      save_container(c, path);
      run.add_output(path);
      entry["file"] = path.filename().string();
    }
    plants.push_back(entry);
  }

  SynthDataSpec data;
  data.num_classes = o.classes;
  data.samples_per_class = o.per_class;
  data.image_size = o.image_size;
  data.channels = o.channels;
  data.margin = o.margin;
  data.noise = o.data_noise;
  data.shift = o.shift;
  data.seed = o.data_seed;
  const Dataset train = make_synth_dataset(data, "train");
  data.samples_per_class = o.test_per_class;
  const Dataset test = make_synth_dataset(data, "test");
  for (const auto& [name, ds] : {std::pair<const char*, const Dataset*>{"train.ntc", &train}, {"test.ntc", &test}}) {
    const auto path = run.output(name);
    save_dataset(*ds, path);
    run.add_output(path);
  }

  run.set("params", count_params(planted.model));
  run.set("model_fingerprint", model_fingerprint(planted.model));
  run.set("plants", plants);
  run.set("train_rows", train.size());
  run.set("test_rows", test.size());
  run.write();
}

void cmd_capture(const CaptureCmdOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("capture", o.out);
  run.config() = {{"model", str(o.model)},     {"data", str(o.data)},      {"samples", o.samples},
                  {"seed", o.seed},            {"reduce", o.reduce},       {"exclude_cls", o.exclude_cls},
                  {"blocks", o.blocks},        {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);

  CaptureOptions opts;
  opts.reduce = parse_reduce(o.reduce);
  opts.mean_includes_cls = !o.exclude_cls;
  for (std::size_t b : o.blocks) {
    if (b >= model.num_blocks()) {
      throw ArgumentError("--blocks: index " + std::to_string(b) + " outside [0, " +
                          std::to_string(model.num_blocks() - 1) + "]");
    }
    opts.blocks.push_back(b + 1);
  }
  const ActivationSet acts = capture(model, data, sample_subset(data, o.samples, o.seed), opts);
  const auto path = run.output("activations.ntc");
  save_activations(acts, path);
  run.add_output(path);
  run.set("rows", acts.rows());
  run.set("blocks_captured", acts.blocks.size());
  run.write();
}

void cmd_identify(const IdentifyOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("identify", o.out);
  run.config() = {{"model", str(o.model)},     {"data", str(o.data)},
                  {"activations", str(o.activations)}, {"samples", o.samples},
                  {"seed", o.seed},            {"reduce", o.reduce},
                  {"exclude_cls", o.exclude_cls}, {"metric", o.metric},
                  {"max_span", o.max_span},    {"top_k", o.top_k},
                  {"replacement", o.replacement}, {"ingest", ingest_json(ingest_flags)},
                  {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const Metric metric = parse_metric(o.metric);

  ActivationSet acts;
  if (!o.activations.empty()) {
    run.add_input("activations", o.activations);
    acts = load_activations(o.activations);
    if (acts.model_fingerprint != model_fingerprint(model)) {
      throw ArgumentError("--activations: '" + str(o.activations) + "' was captured from a different model");
    }
  } else {
    const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);
    CaptureOptions opts;
    opts.reduce = parse_reduce(o.reduce);
    opts.mean_includes_cls = !o.exclude_cls;
    acts = capture(model, data, sample_subset(data, o.samples, o.seed), opts);
  }

  const SimilarityMatrix sim = similarity_matrix(acts, metric);
  const std::size_t b = model.num_blocks();
  const std::vector<std::uint64_t> block_params(b, count_block_params(model.config()));
  const std::uint64_t replacement = approximator_param_count(o.replacement, model.config().d_model);
  const std::size_t max_span = o.max_span == 0 ? b : o.max_span;
  const auto candidates = rank_spans(sim, max_span, o.top_k, block_params, replacement);

  const auto sim_path = run.output("sim.csv");
  const auto dense_path = run.output("sim_matrix.csv");
  const auto cand_path = run.output("candidates.csv");
  write_similarity_csv(sim, sim_path);
  write_similarity_dense_csv(sim, dense_path);
  write_candidates_csv(candidates, metric, cand_path);
  for (const auto& p : {sim_path, dense_path, cand_path}) run.add_output(p);

  json degenerate = json::array();
  for (const auto& [s, e] : sim.degenerate_pairs) degenerate.push_back({s, e});
  run.set("rows", sim.num_rows);
  run.set("degenerate_pairs", degenerate);
  if (!candidates.empty()) {
    const auto& best = candidates.front();
    run.set("best", {{"s", best.s}, {"e", best.e}, {"span", format_span({best.s, best.e})}, {"score", best.score}});
  }
  run.write();
}

void cmd_fit(const FitCmdOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("fit", o.out);
  run.config() = {{"model", str(o.model)}, {"data", str(o.data)},         {"spans", o.spans},
                  {"approximator", o.approximator}, {"fit", fit_json(o.fit)}, {"train", train_json(o.train)},
                  {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const auto spans = parse_spans(o.spans, model.num_blocks());
  const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);
  const std::string source = model_fingerprint(model);

  const auto csv_path = run.output("fit.csv");
  json fits = json::array();
  {
    CsvWriter csv(csv_path, {"span", "s", "e", "approximator", "rows", "params", "fit_residual", "rank"});
    for (const Span& span : spans) {
      const SpanRows rows = span_rows(model, data, span, o.fit);
      FittedApprox fitted = fit_method(o.approximator, rows, span, o.fit, o.train, source);
      const auto path = run.output(span_file_name(span));
      save_approximator(fitted.approx, span, path, fitted.info);
      run.add_output(path);
      const LinearMap* lin = fitted.approx.linear();
      const std::size_t rank = lin ? lin->rank : 0;
      csv.field(format_span(span)).field(span.s).field(span.e).field(fitted.approx.kind());
      csv.field(rows.xs.rows()).field(static_cast<unsigned long long>(fitted.approx.param_count()));
      csv.field(fitted.residual).field(rank);
      csv.end_row();
      fits.push_back({{"span", format_span(span)}, {"file", path.filename().string()},
                      {"residual", fitted.residual}, {"samples", rows.samples}});
    }
  }
  run.add_output(csv_path);
  run.set("fits", fits);
  run.write();
}

void cmd_patch(const PatchOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("patch", o.out);
  std::vector<std::string> files;
  for (const auto& p : o.approx) files.push_back(str(p));
  run.config() = {{"model", str(o.model)}, {"approx", files},   {"data", str(o.data)},
                  {"samples", o.samples},  {"seed", o.seed},    {"reduce", o.reduce},
                  {"final_norm", o.final_norm}, {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  if (o.approx.empty()) throw ArgumentError("--approx: at least one approximator file is required");
  const PatchedModel patched(model, open_plan(o.approx, model, run));

  const auto path = run.output("patch.csv");
  {
    CsvWriter csv(path, {"span", "s", "e", "kind", "approx_params", "removed_params"});
    for (const auto& entry : patched.plan().entries()) {
      csv.field(format_span(entry.span)).field(entry.span.s).field(entry.span.e).field(entry.approx.kind());
      csv.field(static_cast<unsigned long long>(entry.approx.param_count()));
      csv.field(static_cast<unsigned long long>(span_block_params(model, entry.span)));
      csv.end_row();
    }
  }
  run.add_output(path);
  const std::uint64_t before = count_params(model);
  const std::uint64_t after = count_params(patched);
  run.set("params_original", before);
  run.set("params_patched", after);
  run.set("params_saved", static_cast<long long>(before) - static_cast<long long>(after));
  run.set("plan", describe_plan(patched.plan()));

  if (!o.data.empty()) {
    const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);
    FeatureOptions features;
    features.reduce = parse_reduce(o.reduce);
    features.final_norm = o.final_norm;
    const auto subset = sample_subset(data, std::min(o.samples, data.size()), o.seed);
    run.set("drift", final_layer_drift(model, patched, data, subset, features));
  }
  run.write();
}

void cmd_eval(const EvalOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("eval", o.out);
  std::vector<std::string> files;
  for (const auto& p : o.approx) files.push_back(str(p));
  run.config() = {{"model", str(o.model)}, {"train", str(o.train)}, {"test", str(o.test)},
                  {"approx", files},       {"probe", probe_json(o.probe)},
                  {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const ProbeConfig cfg = probe_config(o.probe);
  const Dataset train = load_data(str(o.train), "train", model.config(), ingest_flags, run);
  const Dataset test = load_data(str(o.test), "test", model.config(), ingest_flags, run);

  std::vector<NamedSummary> summaries;
  summaries.emplace_back("original", evaluate(PatchedModel(model, {}), train, test, cfg, o.probe.seeds));
  if (!o.approx.empty()) {
    const PatchedModel patched(model, open_plan(o.approx, model, run));
    summaries.emplace_back("tba", evaluate(patched, train, test, cfg, o.probe.seeds));
  }

  const auto eval_path = run.output("eval.csv");
  const auto summary_path = run.output("summary.csv");
  const auto per_class_path = run.output("per_class.csv");
  write_eval_csv(summaries, eval_path);
  write_summary_csv(summaries, summary_path);
  {
    CsvWriter csv(per_class_path, {"variant", "class", "accuracy"});
    for (const auto& [name, s] : summaries) {
      const std::size_t c = s.runs.front().per_class.size();
      for (std::size_t k = 0; k < c; ++k) {
        double sum = 0.0;
        for (const auto& r : s.runs) sum += r.per_class[k];
        csv.field(name).field(k).field(sum / static_cast<double>(s.runs.size()));
        csv.end_row();
      }
    }
  }
  for (const auto& p : {eval_path, summary_path, per_class_path}) run.add_output(p);
  if (summaries.size() == 2) {
    const ClassDelta delta = per_class_delta(summaries[0].second.runs, summaries[1].second.runs);
    const auto class_path = run.output("class_delta.csv");
    const auto confusion_path = run.output("confusion_delta.csv");
    write_class_delta_csv(delta, class_path);
    write_confusion_delta_csv(delta, confusion_path);
    run.add_output(class_path);
    run.add_output(confusion_path);
  }
  for (const auto& [name, s] : summaries) run.set(name, summary_json(s));
  run.write();
}

void cmd_generalize(const GeneralizeOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("generalize", o.out);
  run.config() = {{"model", str(o.model)}, {"fit_data", str(o.fit_data)}, {"train", str(o.train)},
                  {"test", str(o.test)},   {"span", o.span},               {"fit", fit_json(o.fit)},
                  {"probe", probe_json(o.probe)}, {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const auto spans = parse_spans(o.span, model.num_blocks());
  if (spans.size() != 1) throw ArgumentError("--span takes exactly one span");
  const ProbeConfig cfg = probe_config(o.probe);
  const Dataset fit_data = load_data(str(o.fit_data), "fit_data", model.config(), ingest_flags, run);
  const Dataset train = load_data(str(o.train), "train", model.config(), ingest_flags, run);
  const Dataset test = load_data(str(o.test), "test", model.config(), ingest_flags, run);

  FitConfig fit{o.fit.samples, o.fit.seed, o.fit.bias, o.fit.rcond};
  LinearMap map = fit_span(model, fit_data, spans[0], fit);
  const double residual = map.residual;
  ApproxPlan plan;
  plan.add(spans[0], std::move(map));
  const PatchedModel patched(model, std::move(plan));

  std::vector<NamedSummary> summaries;
  summaries.emplace_back("original", evaluate(PatchedModel(model, {}), train, test, cfg, o.probe.seeds));
  summaries.emplace_back("tba", evaluate(patched, train, test, cfg, o.probe.seeds));
  const auto eval_path = run.output("eval.csv");
  const auto summary_path = run.output("summary.csv");
  write_eval_csv(summaries, eval_path);
  write_summary_csv(summaries, summary_path);
  run.add_output(eval_path);
  run.add_output(summary_path);
  run.set("fit_residual", residual);
  for (const auto& [name, s] : summaries) run.set(name, summary_json(s));
  run.write();
}

void cmd_drift(const DriftOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("drift", o.out);
  run.config() = {{"model", str(o.model)}, {"data", str(o.data)}, {"eval_data", str(o.eval_data)},
                  {"fit", fit_json(o.fit)}, {"eval_samples", o.eval_samples}, {"reduce", o.reduce},
                  {"final_norm", o.final_norm}, {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);
  const Dataset eval_data =
      o.eval_data.empty() ? data : load_data(str(o.eval_data), "eval_data", model.config(), ingest_flags, run);

  FeatureOptions features;
  features.reduce = parse_reduce(o.reduce);
  features.final_norm = o.final_norm;
  const auto subset = sample_subset(eval_data, std::min(o.eval_samples, eval_data.size()), o.fit.seed);
  const FitConfig fit{o.fit.samples, o.fit.seed, o.fit.bias, o.fit.rcond};
  const auto curve = drift_curve(model, data, fit, eval_data, subset, features);
  const auto path = run.output("drift.csv");
  write_drift_csv(curve, path);
  run.add_output(path);
  run.set("points", curve.size());
  run.write();
}

void cmd_pca(const PcaOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("pca", o.out);
  std::vector<std::string> files;
  for (const auto& p : o.approx) files.push_back(str(p));
  run.config() = {{"model", str(o.model)}, {"data", str(o.data)}, {"approx", files},
                  {"samples", o.samples},  {"seed", o.seed},      {"k", o.k},
                  {"feature", o.feature},  {"final_norm", !o.no_final_norm},
                  {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  if (o.approx.empty()) throw ArgumentError("--approx: at least one approximator file is required");
  const PatchedModel patched(model, open_plan(o.approx, model, run));
  const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);
  ProbeFlags flags;
  flags.feature = o.feature;
  flags.no_final_norm = o.no_final_norm;
  const auto subset = sample_subset(data, std::min(o.samples, data.size()), o.seed);
  const auto rows = pca_export(model, patched, data, subset, o.k, probe_features(flags));
  const auto path = run.output("pca.csv");
  write_pca_csv(rows, o.k, path);
  run.add_output(path);
  run.write();
}

void cmd_compare(const CompareOptions& o, const IngestFlags& ingest_flags) {
  require_path(o.out, "--out");
  RunRecord run("compare", o.out);
  run.config() = {{"model", str(o.model)},  {"data", str(o.data)},      {"train", str(o.train)},
                  {"test", str(o.test)},    {"spans", o.spans},         {"methods", o.methods},
                  {"fit", fit_json(o.fit)}, {"train_flags", train_json(o.train_flags)},
                  {"eval_samples", o.eval_samples}, {"reduce", o.reduce}, {"final_norm", o.final_norm},
                  {"probe", probe_json(o.probe)}, {"ingest", ingest_json(ingest_flags)}, {"out", str(o.out)}};
  const TransformerModel model = open_model(o.model, run);
  const auto spans = parse_spans(o.spans, model.num_blocks());
  const Dataset data = load_data(str(o.data), "data", model.config(), ingest_flags, run);
  const bool with_accuracy = !o.train.empty() || !o.test.empty();
  Dataset train, test;
  ProbeConfig cfg;
  if (with_accuracy) {
    train = load_data(str(o.train), "train", model.config(), ingest_flags, run);
    test = load_data(str(o.test), "test", model.config(), ingest_flags, run);
    cfg = probe_config(o.probe);
  }
  for (const auto& m : o.methods) {
    if (m != "tba" && m != "skipat" && m != "mlp" && m != "resmlp") {
      throw ArgumentError("--methods: unknown method '" + m + "' (tba, skipat, mlp, resmlp)");
    }
  }

  FeatureOptions features;
  features.reduce = parse_reduce(o.reduce);
  features.final_norm = o.final_norm;
  const auto subset = sample_subset(data, std::min(o.eval_samples, data.size()), o.fit.seed);
  const std::string source = model_fingerprint(model);

  const auto path = run.output("compare.csv");
  json rows_json = json::array();
  {
    CsvWriter csv(path, {"span", "s", "e", "method", "params", "params_saved", "fit_residual", "drift", "acc_mean",
                         "acc_std"});
    if (with_accuracy) {
      const EvalSummary s = evaluate(PatchedModel(model, {}), train, test, cfg, o.probe.seeds);
      csv.field("").field("").field("").field("original").field(static_cast<unsigned long long>(count_params(model)));
      csv.field(0).field("").field(0.0).field(s.mean).field(s.stddev);
      csv.end_row();
      rows_json.push_back({{"method", "original"}, {"accuracy", summary_json(s)}});
    }
    for (const Span& span : spans) {
      const SpanRows rows = span_rows(model, data, span, o.fit);
      for (const auto& method : o.methods) {
        FittedApprox fitted = fit_method(method, rows, span, o.fit, o.train_flags, source);
        const std::uint64_t approx_params = fitted.approx.param_count();
        ApproxPlan plan;
        plan.add(span, std::move(fitted.approx));
        const PatchedModel patched(model, std::move(plan));
        const double drift = final_layer_drift(model, patched, data, subset, features);
        const long long saved =
            static_cast<long long>(span_block_params(model, span)) - static_cast<long long>(approx_params);
        csv.field(format_span(span)).field(span.s).field(span.e).field(method);
        csv.field(static_cast<unsigned long long>(approx_params)).field(saved);
        csv.field(fitted.residual).field(drift);
        json row = {{"span", format_span(span)}, {"method", method}, {"fit_residual", fitted.residual},
                    {"drift", drift}};
        if (with_accuracy) {
          const EvalSummary s = evaluate(patched, train, test, cfg, o.probe.seeds);
          csv.field(s.mean).field(s.stddev);
          row["accuracy"] = summary_json(s);
        } else {
          csv.field("").field("");
        }
        csv.end_row();
        rows_json.push_back(row);
      }
    }
  }
  run.add_output(path);
  run.set("rows", rows_json);
  run.write();
}

}  // namespace tba::cli
