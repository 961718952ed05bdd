// Command-line entry point: data generation, training, evaluation,
// ablations, hyperparameter sweeps and the retrieval service.

#include "hmrn/experiments.hpp"
#include "hmrn/http_server.hpp"
#include "hmrn/synthetic.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace hmrn;

namespace {

struct GenDataOptions {
  std::string out;
  std::size_t train = 2000, val = 200, test = 500;
  SyntheticConfig synth;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path.string());
  out << text;
}

void cmd_gen_data(const GenDataOptions& o) {
  fs::create_directories(o.out);
  SyntheticConfig cfg = o.synth;
  const std::uint64_t seed = cfg.seed;
  struct SplitSpec {
    Split split;
    std::size_t n;
    const char* dir;
  };
  Vocabulary vocab;
  for (const SplitSpec& s : {SplitSpec{Split::Train, o.train, "train"}, SplitSpec{Split::Val, o.val, "val"},
                             SplitSpec{Split::Test, o.test, "test"}}) {
    if (s.n == 0) continue;
    cfg.num_scenes = s.n;
    cfg.split = s.split;
    cfg.id_prefix = s.dir;
    cfg.seed = seed * 3 + static_cast<std::uint64_t>(s.split);
    auto data = generate_synthetic_dataset(cfg);
    save_dataset(data.dataset, (fs::path(o.out) / s.dir).string());
    vocab = std::move(data.vocab);
    std::cerr << "wrote " << s.n << " " << s.dir << " scenes\n";
  }
  vocab.save((fs::path(o.out) / "vocab.txt").string());

  // A starting config that points at the generated splits.
  TrainConfig tc;
  tc.model.X = cfg.X;
  tc.model.vocab_size = vocab.size();
  tc.num_queries = cfg.N;
  nlohmann::json j = to_json(tc);
  j["dims"]["K"] = cfg.K;
  j["dims"]["N"] = cfg.N;
  j["dataset"] = {{"train", "train/manifest.json"},
                  {"val", "val/manifest.json"},
                  {"test", "test/manifest.json"},
                  {"vocab", "vocab.txt"}};
  j["checkpoint"] = "model.ckpt";
  write_text(fs::path(o.out) / "config.json", j.dump(2) + "\n");
  std::cerr << "wrote vocab.txt (" << vocab.size() << " ids) and config.json in " << o.out << "\n";
}

// Paths inside a config are relative to the config file.
std::string resolve(const std::string& config_path, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(config_path).parent_path() / p).string();
}

struct LoadedRun {
  RunConfig rc;
  Vocabulary vocab;
  Dataset train, val, test;
  bool has_val = false, has_test = false;
};

LoadedRun load_run(const std::string& config_path, const std::vector<std::string>& overrides) {
  LoadedRun r;
  r.rc = load_run_config(config_path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos, "override must look like key=value: " + o);
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(o.substr(eq + 1));
    } catch (const nlohmann::json::exception&) {
      v = o.substr(eq + 1);  // bare strings
    }
    merge_train_config({{o.substr(0, eq), v}}, r.rc.train);
  }
  require(!r.rc.vocab_path.empty(), "config has no dataset.vocab path");
  require(!r.rc.train_manifest.empty(), "config has no dataset.train path");
  r.vocab = Vocabulary::load(resolve(config_path, r.rc.vocab_path));
  r.rc.train.model.vocab_size = r.vocab.size();
  r.train = load_dataset(resolve(config_path, r.rc.train_manifest), r.vocab);
  if (!r.rc.val_manifest.empty()) {
    r.val = load_dataset(resolve(config_path, r.rc.val_manifest), r.vocab);
    r.has_val = true;
  }
  if (!r.rc.test_manifest.empty()) {
    r.test = load_dataset(resolve(config_path, r.rc.test_manifest), r.vocab);
    r.has_test = true;
  }
  require(!r.train.records.empty(), "training split is empty");
  r.rc.train.model.X = static_cast<std::size_t>(r.train.records.front().regions.features.cols());
  return r;
}

TrainLogger stderr_logger(const std::string& tag) {
  return [tag](const EpochStats& e) {
    std::fprintf(stderr, "[%s] epoch %3zu lr %.2e loss %.5f", tag.c_str(), e.epoch, e.lr, e.mean_loss);
    if (e.val) std::fprintf(stderr, " | val Avg R@1 %.2f R@Sum %.2f MR %.2f", e.val->avg_r1, e.val->avg_rsum,
                            e.val->avg_mr);
    std::fprintf(stderr, "\n");
  };
}

struct TrainOptions {
  std::string config, out, direction;
  std::vector<std::string> set;
  std::string format = "text";
};

void cmd_train(const TrainOptions& o) {
  auto run = load_run(o.config, o.set);
  if (!o.direction.empty()) run.rc.train.model.direction = parse_direction(o.direction);
  std::string out = o.out.empty() ? resolve(o.config, run.rc.checkpoint_out) : o.out;
  require(!out.empty(), "no checkpoint output path (use --out or the config's checkpoint key)");
  const auto& cfg = run.rc.train;
  auto res = train_model(run.train, run.has_val ? &run.val : nullptr, cfg, run.vocab.hash(),
                         stderr_logger(to_string(cfg.model.direction)));
  save_checkpoint(res.checkpoint, out);
  std::cerr << "saved checkpoint " << out << " (best epoch " << res.best_epoch << ", hash "
            << res.checkpoint.hash() << ")\n";
  if (run.has_test) {
    const std::size_t rounds = std::min(cfg.num_queries, run.test.min_queries());
    const auto rep = evaluate_single(res.checkpoint.model, run.test, rounds);
    std::cout << format_report(rep, parse_report_format(o.format));
  }
}

struct EvalOptions {
  std::string ckpt_it, ckpt_ti, data, vocab, mode = "ensemble", format = "text";
  std::size_t rounds = 0;
};

std::string default_vocab_for(const std::string& manifest) {
  const fs::path p = fs::path(manifest).parent_path().parent_path() / "vocab.txt";
  require(fs::exists(p), "no --vocab given and " + p.string() + " does not exist");
  return p.string();
}

std::optional<Checkpoint> maybe_load(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_checkpoint(path);
}

void cmd_eval(const EvalOptions& o) {
  const auto vocab = Vocabulary::load(o.vocab.empty() ? default_vocab_for(o.data) : o.vocab);
  const auto it = maybe_load(o.ckpt_it), ti = maybe_load(o.ckpt_ti);
  for (const auto* ck : {it ? &*it : nullptr, ti ? &*ti : nullptr})
    if (ck) require(ck->vocab_hash == vocab.hash(), "vocabulary does not match the checkpoint");
  const auto data = load_dataset(o.data, vocab);
  const ScoreMode mode = parse_score_mode(o.mode);
  RetrievalModels models{it ? &it->model : nullptr, ti ? &ti->model : nullptr};
  // A joint checkpoint can fill either role.
  if (!models.ti && models.it && models.it->uses_ti()) models.ti = models.it;
  if (!models.it && models.ti && models.ti->uses_it()) models.it = models.ti;
  const std::size_t rounds = o.rounds ? o.rounds : data.min_queries();
  std::cout << format_report(evaluate(models, mode, data, rounds), parse_report_format(o.format));
}

struct ExperimentOptions {
  std::string config, preset = "hierarchy", param = "lambda", values, format = "text";
  std::vector<std::string> set;
};

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error("bad grid value: '" + tok + "'");
    }
  }
  return out;
}

void cmd_ablate(const ExperimentOptions& o) {
  auto run = load_run(o.config, o.set);
  require(run.has_test, "ablation needs a test split in the config");
  ExperimentData data{&run.train, run.has_val ? &run.val : nullptr, &run.test, run.vocab.hash()};
  ModelCache cache(data, stderr_logger("ablate"));
  const auto rows = run_ablation(ablation_preset(o.preset), run.rc.train, cache, data);
  std::cout << format_ablation(rows, parse_report_format(o.format));
}

void cmd_grid(const ExperimentOptions& o) {
  auto run = load_run(o.config, o.set);
  require(run.has_test, "grid needs a test split in the config");
  ExperimentData data{&run.train, run.has_val ? &run.val : nullptr, &run.test, run.vocab.hash()};
  ModelCache cache(data, stderr_logger("grid"));
  const GridParam p = parse_grid_param(o.param);
  const auto values = o.values.empty() ? default_grid_values(p) : parse_values(o.values);
  const auto rows = run_grid(p, values, run.rc.train, cache, data);
  std::cout << format_grid(p, rows, parse_report_format(o.format));
}

struct ServeOptions {
  std::string ckpt_it, ckpt_ti, vocab, host = "127.0.0.1";
  std::vector<std::string> galleries;
  int port = 8080;
};

HttpServer* g_server = nullptr;

void cmd_serve(const ServeOptions& o) {
  require(!o.galleries.empty(), "serve needs at least one --gallery");
  // Galleries are "id=manifest" or a bare manifest path (id "default").
  std::vector<std::pair<std::string, std::string>> gals;
  for (const auto& g : o.galleries) {
    const auto eq = g.find('=');
    gals.emplace_back(eq == std::string::npos ? "default" : g.substr(0, eq),
                      eq == std::string::npos ? g : g.substr(eq + 1));
  }
  const auto vocab = Vocabulary::load(o.vocab.empty() ? default_vocab_for(gals.front().second) : o.vocab);
  RetrievalService svc(make_service_models(maybe_load(o.ckpt_it), maybe_load(o.ckpt_ti)), vocab);
  for (const auto& [id, path] : gals) {
    svc.register_gallery(id, path);
    const auto info = svc.load_gallery(id);
    std::cerr << "gallery " << id << ": " << info.at("size") << " images\n";
  }
  HttpServer server(svc);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving on http://" << o.host << ":" << o.port << " (checkpoint "
            << svc.models()->checkpoint_hash << ")\n";
  require(server.listen(o.host, o.port), "cannot listen on " + o.host + ":" + std::to_string(o.port));
}

void cmd_params(const std::string& path) {
  const auto ck = load_checkpoint(path);
  const auto c = count_parameters(ck);
  std::cout << "total " << c.total << "\nwithout_embedding " << c.without_embedding << "\n";
  for (const auto& [module, n] : c.per_module) std::cout << module << ' ' << n << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical matching and reasoning for multi-query image retrieval"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate synthetic train/val/test splits and a vocabulary");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--train", gen.train, "Training scenes");
  g->add_option("--val", gen.val, "Validation scenes");
  g->add_option("--test", gen.test, "Test scenes");
  g->add_option("--K", gen.synth.K, "Regions per image");
  g->add_option("--N", gen.synth.N, "Queries per image");
  g->add_option("--X", gen.synth.X, "Region feature size (multiple of 3)");
  g->add_option("--sigma", gen.synth.noise_sigma, "Feature noise");
  g->add_option("--colors", gen.synth.num_colors, "Color attribute values");
  g->add_option("--objects", gen.synth.num_objects, "Object attribute values");
  g->add_option("--positions", gen.synth.num_positions, "Position attribute values");
  g->add_option("--seed", gen.synth.seed, "Scene seed");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train one model from a config file");
  t->add_option("--config", tr.config, "Config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Checkpoint path (overrides config)");
  t->add_option("--direction", tr.direction, "it | ti | joint (overrides config)");
  t->add_option("--set", tr.set, "Config override key=value (repeatable)");
  t->add_option("--format", tr.format, "Test report format: csv | text");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on a split");
  e->add_option("--checkpoint-it", ev.ckpt_it, "Image-text (or joint) checkpoint");
  e->add_option("--checkpoint-ti", ev.ckpt_ti, "Text-image (or joint) checkpoint");
  e->add_option("--data", ev.data, "Split manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--vocab", ev.vocab, "Vocabulary file (default: ../vocab.txt next to the split)");
  e->add_option("--mode", ev.mode, "it | ti | ensemble");
  e->add_option("--rounds", ev.rounds, "Rounds to evaluate (default: all)");
  e->add_option("--format", ev.format, "csv | text");

  ExperimentOptions ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate an ablation row set");
  a->add_option("--config", ab.config, "Config JSON")->required()->check(CLI::ExistingFile);
  a->add_option("--preset", ab.preset, "hierarchy | intra-mode | steps | strategy");
  a->add_option("--set", ab.set, "Config override key=value (repeatable)");
  a->add_option("--format", ab.format, "csv | text");

  ExperimentOptions gr;
  auto* gc = app.add_subcommand("grid", "Hyperparameter sweep");
  gc->add_option("--config", gr.config, "Config JSON")->required()->check(CLI::ExistingFile);
  gc->add_option("--param", gr.param, "lambda | tau | alpha-beta");
  gc->add_option("--values", gr.values, "Comma-separated values (default depends on --param)");
  gc->add_option("--set", gr.set, "Config override key=value (repeatable)");
  gc->add_option("--format", gr.format, "csv | text");

  ServeOptions sv;
  auto* s = app.add_subcommand("serve", "Run the HTTP retrieval service");
  s->add_option("--checkpoint-it", sv.ckpt_it, "Image-text (or joint) checkpoint");
  s->add_option("--checkpoint-ti", sv.ckpt_ti, "Text-image (or joint) checkpoint");
  s->add_option("--gallery", sv.galleries, "Gallery manifest, optionally as id=path (repeatable)")->required();
  s->add_option("--vocab", sv.vocab, "Vocabulary file");
  s->add_option("--host", sv.host, "Bind address");
  s->add_option("--port", sv.port, "Port");

  std::string params_ckpt;
  auto* p = app.add_subcommand("params", "Count checkpoint parameters");
  p->add_option("--checkpoint", params_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) cmd_gen_data(gen);
    if (*t) cmd_train(tr);
    if (*e) cmd_eval(ev);
    if (*a) cmd_ablate(ab);
    if (*gc) cmd_grid(gr);
    if (*s) cmd_serve(sv);
    if (*p) cmd_params(params_ckpt);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
