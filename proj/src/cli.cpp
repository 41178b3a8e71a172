#include "msst/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msst/checkpoint.hpp"
#include "msst/dataset.hpp"
#include "msst/ensemble.hpp"
#include "msst/gradcheck.hpp"
#include "msst/graph.hpp"
#include "msst/modality.hpp"
#include "msst/model.hpp"
#include "msst/train.hpp"

namespace msst {

namespace {

using json = nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::uint64_t h = 1469598103934665603ULL;
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config " + path);
    char c;
    while (in.get(c)) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// One manifest next to every artifact a run produces: rerunning with an
// identical manifest must reproduce the artifact bit-for-bit.
void write_manifest(const std::string& path, const std::string& command,
                    const std::string& config_path, std::uint64_t seed) {
  char hash[24];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(fnv1a_file(config_path)));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "{\"command\":\"" << command << "\",\"config_hash\":\"" << hash
      << "\",\"seed\":" << seed << ",\"version\":\"" << k_version << "\"}\n";
}

struct FullConfig {
  ModelConfig model;
  TrainConfig train;
};

// Flat JSON object whose keys mirror the config struct fields.
FullConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config " + path + ": expected an object");

  FullConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "layers") cfg.model.layers = value.get<index_t>();
      else if (key == "base_channel") cfg.model.base_channel = value.get<index_t>();
      else if (key == "heads") cfg.model.heads = value.get<index_t>();
      else if (key == "num_classes") cfg.model.num_classes = value.get<index_t>();
      else if (key == "frames") cfg.model.frames = value.get<index_t>();
      else if (key == "in_channels") cfg.model.in_channels = value.get<index_t>();
      else if (key == "noise_std") cfg.model.noise_std = value.get<double>();
      else if (key == "epochs") cfg.train.epochs = value.get<index_t>();
      else if (key == "warmup_epochs") cfg.train.warmup_epochs = value.get<index_t>();
      else if (key == "batch_size") cfg.train.batch_size = value.get<index_t>();
      else if (key == "lr_max") cfg.train.lr_max = value.get<double>();
      else if (key == "lr_min") cfg.train.lr_min = value.get<double>();
      else if (key == "momentum") cfg.train.momentum = value.get<double>();
      else if (key == "weight_decay") cfg.train.weight_decay = value.get<double>();
      else if (key == "joints")
        throw std::runtime_error("joints comes from the graph file, not the config");
      else if (key == "seed")
        throw std::runtime_error("seed is a command-line flag, not a config field");
      else
        throw std::runtime_error("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw std::runtime_error("config " + path + ", key '" + key + "': " + e.what());
    }
  }
  return cfg;
}

std::vector<SkeletonSequence> load_prepared(const std::string& path,
                                            const ModalitySpec& spec,
                                            index_t frames, const GraphSpec& graph,
                                            index_t num_classes) {
  std::vector<SkeletonSequence> raw = load_dataset(path);
  std::vector<SkeletonSequence> out;
  out.reserve(raw.size());
  for (const auto& s : raw) {
    if (s.label >= num_classes)
      throw std::runtime_error(path + ": label " + std::to_string(s.label) +
                               " outside configured num_classes " +
                               std::to_string(num_classes));
    out.push_back(prepare_sequence(s, spec, frames, graph));
  }
  return out;
}

StreamScores scores_from_eval(const EvalResult& eval, const std::string& tag,
                              const std::vector<SkeletonSequence>& samples,
                              index_t classes) {
  StreamScores s;
  s.tag = tag;
  s.classes = classes;
  s.scores = eval.scores;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    s.ids.push_back(static_cast<index_t>(i));
    s.labels.push_back(samples[i].label);
  }
  return s;
}

void write_trace(const std::string& path, const AttentionTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "[";
  for (std::size_t e = 0; e < trace.entries.size(); ++e) {
    const auto& entry = trace.entries[e];
    out << (e ? ",\n " : "") << "{\"layer\":" << entry.layer
        << ",\"head\":" << entry.head << ",\"kind\":\"" << entry.kind
        << "\",\"map\":[";
    for (index_t i = 0; i < entry.len; ++i) {
      out << (i ? ",[" : "[");
      for (index_t j = 0; j < entry.len; ++j)
        out << (j ? "," : "")
            << fmt_double(entry.map[static_cast<std::size_t>(i * entry.len + j)]);
      out << "]";
    }
    out << "]}";
  }
  out << "]\n";
  if (!out) throw std::runtime_error("write failed for " + path);
}

struct CommonArgs {
  std::string config, data, graph, modality, out;
  index_t k = -1;
  std::uint64_t seed = 1;
};

int run_synth(const SyntheticSpec& spec, const std::string& out,
              std::uint64_t seed) {
  SyntheticSpec s = spec;
  s.seed = seed;
  const auto samples = generate_synthetic(s);
  save_dataset(out, samples);
  write_manifest(out + ".manifest.json", "synth", "", seed);
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return 0;
}

int run_train(const CommonArgs& args, const std::string& val_path) {
  const GraphSpec graph = load_graph(args.graph);
  FullConfig cfg = parse_config(args.config);
  cfg.train.seed = args.seed;
  const ModalitySpec modality = parse_modality(args.modality, args.k, graph);
  const std::string tag = stream_tag(modality, graph);

  const auto train_set = load_prepared(args.data, modality, cfg.model.frames, graph,
                                       cfg.model.num_classes);
  const auto val_set =
      val_path.empty() || val_path == args.data
          ? train_set
          : load_prepared(val_path, modality, cfg.model.frames, graph,
                          cfg.model.num_classes);

  MsstModel model(cfg.model, graph, args.seed);
  std::cout << "stream " << tag << ", " << model.params().total_size()
            << " parameters, " << train_set.size() << " train / " << val_set.size()
            << " val samples\n";
  const TrainResult result =
      train_model(model, train_set, val_set, cfg.train, args.out, &std::cout);

  const EvalResult final_eval = evaluate(model, val_set, cfg.train.batch_size);
  save_scores(args.out + "/scores.json",
              scores_from_eval(final_eval, tag, val_set, cfg.model.num_classes));
  write_manifest(args.out + "/manifest.json", "train", args.config, args.seed);
  std::cout << "best val_acc " << fmt_double(result.best_val_acc) << " at epoch "
            << result.best_epoch << ", final val_acc "
            << fmt_double(final_eval.accuracy) << "\n";
  return 0;
}

int run_eval(const CommonArgs& args, const std::string& ckpt,
             const std::string& trace_path, bool trace_only) {
  const GraphSpec graph = load_graph(args.graph);
  const FullConfig cfg = parse_config(args.config);
  const ModalitySpec modality = parse_modality(args.modality, args.k, graph);
  const auto samples = load_prepared(args.data, modality, cfg.model.frames, graph,
                                     cfg.model.num_classes);

  MsstModel model(cfg.model, graph, 0);
  load_checkpoint(ckpt, model.params());

  AttentionTrace trace;
  const bool want_trace = !trace_path.empty();
  const EvalResult result =
      evaluate(model, samples, cfg.train.batch_size, want_trace ? &trace : nullptr);
  std::cout << "accuracy " << fmt_double(result.accuracy) << " over "
            << samples.size() << " samples\n";

  if (want_trace) {
    write_trace(trace_path, trace);
    write_manifest(trace_path + ".manifest.json", trace_only ? "trace" : "eval",
                   args.config, args.seed);
  }
  if (!trace_only && !args.out.empty()) {
    save_scores(args.out, scores_from_eval(result, stream_tag(modality, graph), samples,
                                           cfg.model.num_classes));
    write_manifest(args.out + ".manifest.json", "eval", args.config, args.seed);
  }
  return 0;
}

int run_ensemble(const std::vector<std::string>& files, const std::string& expect,
                 const std::string& out) {
  std::vector<StreamScores> streams;
  for (const auto& f : files) streams.push_back(load_scores(f));

  if (!expect.empty()) {
    std::set<std::string> tags;
    for (const auto& s : streams) tags.insert(s.tag);
    const std::set<std::string> four{"J", "B", "JM", "BM"};
    std::set<std::string> six = four;
    six.insert("J2");
    six.insert("B2M");
    const auto& wanted = expect == "4s" ? four : six;
    if (tags != wanted) {
      std::string have;
      for (const auto& t : tags) have += (have.empty() ? "" : ",") + t;
      throw std::runtime_error("ensemble: " + expect + " requires exact stream set, got {" +
                               have + "}");
    }
  }

  for (const auto& s : streams)
    std::cout << "stream " << s.tag << " accuracy "
              << fmt_double(ensemble({s}).accuracy) << "\n";
  const EnsembleResult result = ensemble(streams);
  std::cout << "ensemble accuracy " << fmt_double(result.accuracy) << " over "
            << result.predictions.size() << " samples\n";

  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot open " + out);
    f << "{\"accuracy\":" << fmt_double(result.accuracy) << ",\"predictions\":[";
    for (std::size_t i = 0; i < result.predictions.size(); ++i)
      f << (i ? "," : "") << result.predictions[i];
    f << "]}\n";
    write_manifest(out + ".manifest.json", "ensemble", "", 0);
  }
  return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"MSST-GCN skeleton action recognition"};
  app.require_subcommand(1);

  SyntheticSpec synth_spec;
  std::string synth_out;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_out, "output JSONL path")->required();
  synth->add_option("--classes", synth_spec.num_classes, "number of classes");
  synth->add_option("--per-class", synth_spec.per_class, "samples per class");
  synth->add_option("--joints", synth_spec.joints, "joints per frame");
  synth->add_option("--t-min", synth_spec.t_min, "minimum frame count");
  synth->add_option("--t-max", synth_spec.t_max, "maximum frame count");
  synth->add_option("--noise", synth_spec.noise, "Gaussian noise level");
  synth->add_option("--seed", synth_seed, "generator seed");

  const std::vector<std::string> modality_names{"joint", "bone", "joint-motion",
                                                "bone-motion"};
  auto add_common = [&modality_names](CLI::App* cmd, CommonArgs& args, bool with_out) {
    cmd->add_option("--config", args.config, "model/training config JSON")->required();
    cmd->add_option("--data", args.data, "dataset JSONL")->required();
    cmd->add_option("--graph", args.graph, "skeleton graph JSON")->required();
    cmd->add_option("--modality", args.modality, "input modality")
        ->required()
        ->check(CLI::IsMember(modality_names));
    cmd->add_option("--k", args.k, "bone power override (default per modality)");
    cmd->add_option("--seed", args.seed, "run seed");
    if (with_out) cmd->add_option("--out", args.out, "output directory")->required();
  };

  CommonArgs train_args;
  std::string train_val;
  auto* train = app.add_subcommand("train", "train one stream");
  add_common(train, train_args, true);
  train->add_option("--val", train_val, "held-out dataset (defaults to --data)");

  CommonArgs eval_args;
  std::string eval_ckpt, eval_trace;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_args, false);
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--out", eval_args.out, "score file to write");
  eval->add_option("--trace-attn", eval_trace, "attention map file to write");

  CommonArgs trace_args;
  std::string trace_ckpt;
  auto* trace = app.add_subcommand("trace", "export attention maps");
  add_common(trace, trace_args, false);
  trace->add_option("--ckpt", trace_ckpt, "checkpoint path")->required();
  trace->add_option("--out", trace_args.out, "attention map file to write")->required();

  std::vector<std::string> ensemble_files;
  std::string ensemble_expect, ensemble_out;
  auto* ens = app.add_subcommand("ensemble", "fuse per-stream score files");
  ens->add_option("files", ensemble_files, "score files")->required()->expected(-1);
  ens->add_option("--expect", ensemble_expect, "assert the stream set")
      ->check(CLI::IsMember({"4s", "6s"}));
  ens->add_option("--out", ensemble_out, "result file to write");

  auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return run_synth(synth_spec, synth_out, synth_seed);
    if (*train) return run_train(train_args, train_val);
    if (*eval) return run_eval(eval_args, eval_ckpt, eval_trace, false);
    if (*trace) {
      const std::string maps = trace_args.out; // --out names the map file here
      trace_args.out.clear();
      return run_eval(trace_args, trace_ckpt, maps, true);
    }
    if (*ens) return run_ensemble(ensemble_files, ensemble_expect, ensemble_out);
    if (*gradcheck) {
      const auto cases = gradcheck_suite(&std::cout);
      if (gradcheck_passed(cases)) {
        std::cout << "all " << cases.size() << " gradient checks passed\n";
        return 0;
      }
      std::cout << "gradient check FAILED\n";
      return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

} // namespace msst
