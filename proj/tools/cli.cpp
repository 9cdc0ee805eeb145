#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "outfit/checkpoint.hpp"
#include "outfit/data.hpp"
#include "outfit/errors.hpp"
#include "outfit/eval.hpp"
#include "outfit/index.hpp"
#include "outfit/service.hpp"
#include "outfit/training.hpp"

namespace outfit::cli {
namespace {

using nlohmann::json;

// Config files may use snake_case keys and omit the section of the invoked
// subcommand: `image_encoder = cnn` under `train cp` means --image-encoder.
class ConfigFile : public CLI::ConfigINI {
 public:
  std::vector<std::string> command_path;

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    for (auto& item : items) {
      for (auto& c : item.name) {
        if (c == '_') c = '-';
      }
      if (item.parents.empty() && item.name != "++" && item.name != "--") item.parents = command_path;
    }
    return items;
  }
};

std::vector<std::string> command_path(const CLI::App& app, int argc, const char* const* argv) {
  std::vector<std::string> path;
  const CLI::App* current = &app;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.empty() || arg[0] == '-') continue;
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : current->get_subcommands([](const CLI::App*) { return true; })) {
      if (s->get_name() == arg) sub = s;
    }
    if (!sub) continue;
    path.push_back(arg);
    current = sub;
  }
  return path;
}

struct DataOptions {
  std::string dir;
  bool disjoint = false;
  std::string images = "metadata";
  std::size_t max_outfit_len = 8;
  std::uint64_t seed = 0;

  void add_to(CLI::App* app) {
    app->add_option("--data", dir, "Dataset directory (Polyvore layout)")->required();
    app->add_flag("--disjoint", disjoint, "Use the disjoint split variant");
    app->add_option("--images", images, "Image source: metadata or jpeg")
        ->check(CLI::IsMember({"metadata", "jpeg"}));
    app->add_option("--max-outfit-len", max_outfit_len, "Truncate longer outfits");
  }

  DatasetSplit load() const {
    LoadOptions o;
    o.max_outfit_len = max_outfit_len;
    o.seed = seed;
    o.images = images == "jpeg" ? ImageSource::Jpeg : ImageSource::Metadata;
    if (o.images == ImageSource::Jpeg) o.payload_dim = 1024;
    return load_polyvore(dir, disjoint, o);
  }
};

struct ModelOptions {
  std::string image_encoder = "mlp";
  std::string text_encoder = "hash_bow";
  std::string text_source = "description";
  std::size_t payload_dim = 0;  // 0: taken from the data
  std::size_t image_hidden = 128;
  std::size_t d_img = 64;
  std::size_t d_text = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_hidden = 256;
  std::size_t max_outfit_len = 8;
  bool full_scale = false;
  std::uint64_t model_seed = 0;

  void add_to(CLI::App* app) {
    app->add_option("--image-encoder", image_encoder, "mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
    app->add_option("--text-encoder", text_encoder, "hash_bow")->check(CLI::IsMember({"hash_bow"}));
    app->add_option("--text-source", text_source, "description or category")
        ->check(CLI::IsMember({"description", "category"}));
    app->add_option("--payload-dim", payload_dim, "Image payload length (default: from data)");
    app->add_option("--image-hidden", image_hidden, "Hidden width of the MLP image encoder");
    app->add_option("--d-img", d_img, "Image embedding width");
    app->add_option("--d-text", d_text, "Text embedding width");
    app->add_option("--layers", layers, "Transformer layers");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--ff-hidden", ff_hidden, "Feed-forward width");
    app->add_option("--model-max-len", max_outfit_len, "Longest outfit the encoder accepts");
    app->add_flag("--full-scale", full_scale, "Six layers, sixteen heads");
    app->add_option("--model-seed", model_seed, "Parameter initialisation seed");
  }

  ModelConfig build(const DatasetSplit& data) const {
    ModelConfig c;
    c.items.image = parse_image_backbone(image_encoder);
    c.items.text_source = parse_text_source(text_source);
    c.items.payload_dim = payload_dim;
    if (c.items.payload_dim == 0) {
      c.items.payload_dim = data.catalog.empty() ? 32 : data.catalog[0].payload.size();
    }
    c.items.image_hidden = image_hidden;
    c.items.d_img = d_img;
    c.items.d_text = d_text;
    c.encoder = full_scale ? EncoderConfig::full_scale() : EncoderConfig{};
    c.encoder.model_dim = d_img + d_text;
    if (!full_scale) {
      c.encoder.layers = layers;
      c.encoder.heads = heads;
      c.encoder.ff_hidden = ff_hidden;
    }
    c.encoder.max_outfit_len = max_outfit_len;
    c.seed = model_seed;
    c.validate();
    return c;
  }
};

struct TrainOptions {
  TrainConfig config;
  std::size_t epochs = 0;
  bool full_scale_lr = false;
  bool no_hard = false;
  bool no_all = false;
  bool squared = false;
  std::string strategy = "curriculum";
  std::string metrics;
  std::string resume;
  std::size_t stop_after = 0;

  void add_to(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", config.batch_size, "Batch size");
    app->add_option("--lr", config.lr_initial, "Initial learning rate");
    app->add_flag("--full-scale-lr", full_scale_lr, "Use the full-scale learning rate 1e-5");
    app->add_option("--lr-halving", config.lr_halving_interval, "Halve the learning rate every N epochs");
    app->add_option("--margin", config.margin, "Ranking margin");
    app->add_option("--negatives", config.negatives, "Negatives per instance");
    app->add_option("--switch-fraction", config.curriculum_switch_fraction,
                    "Fraction of epochs before fine-grained negatives");
    app->add_option("--negative-strategy", strategy, "curriculum, high_level or fine_grained")
        ->check(CLI::IsMember({"curriculum", "high_level", "fine_grained"}));
    app->add_option("--seed", config.seed, "Training seed");
    app->add_option("--grad-clip", config.grad_clip, "Global gradient norm bound (0 disables)");
    app->add_option("--focal-gamma", config.focal.gamma, "Focal loss gamma");
    app->add_option("--focal-alpha", config.focal.alpha, "Focal loss alpha");
    app->add_flag("--no-hard", no_hard, "Drop the hardest-negative term");
    app->add_flag("--no-all", no_all, "Drop the all-negatives term");
    app->add_flag("--squared-distance", squared, "Use squared Euclidean distance");
    app->add_flag("--freeze-encoders", config.freeze_item_encoders, "Keep item encoders fixed");
    app->add_flag("--frozen-candidates", config.frozen_candidates,
                  "Embed positives and negatives without gradients");
    app->add_option("--metrics", metrics, "Write per-epoch JSON lines here instead of stdout");
    app->add_option("--resume", resume, "Continue an interrupted run from this checkpoint");
    app->add_option("--stop-after", stop_after, "Stop after this many epochs in total");
  }

  TrainConfig build(bool cir) const {
    TrainConfig c = config;
    if (full_scale_lr) c.lr_initial = TrainConfig::full_scale().lr_initial;
    if (epochs > 0) (cir ? c.epochs_cir : c.epochs_cp) = epochs;
    c.use_hard = !no_hard;
    c.use_all = !no_all;
    c.distance = squared ? DistanceKind::SquaredEuclidean : DistanceKind::Euclidean;
    c.negative_strategy = parse_negative_strategy(strategy);
    c.validate();
    return c;
  }
};

class MetricsSink {
 public:
  MetricsSink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw InputError("cannot write metrics file '" + path + "'");
      out_ = &file_;
    }
  }
  void operator()(const EpochMetrics& m) { *out_ << to_json(m).dump() << std::endl; }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      const long long k = std::stoll(part);
      if (k < 1) throw std::out_of_range("k");
      ks.push_back(static_cast<std::size_t>(k));
    } catch (const std::exception&) {
      throw InputError("bad k list '" + text + "'");
    }
  }
  if (ks.empty()) throw InputError("empty k list");
  return ks;
}

std::atomic<bool> g_stop_requested{false};

extern "C" void on_signal(int) { g_stop_requested.store(true); }

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Outfit compatibility and complementary item retrieval", "outfit");
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI/TOML file");
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  // generate-synthetic
  auto* gen = app.add_subcommand("generate-synthetic", "Write a planted-rule synthetic dataset");
  SyntheticSpec spec;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--styles", spec.num_styles, "Number of latent styles");
  gen->add_option("--high-categories", spec.num_high_categories, "High-level categories");
  gen->add_option("--fine-per-high", spec.fine_per_high, "Fine categories per high-level one");
  gen->add_option("--items-per-fine", spec.items_per_fine, "Items per fine category");
  gen->add_option("--min-len", spec.min_outfit_len, "Shortest outfit");
  gen->add_option("--max-len", spec.max_outfit_len, "Longest outfit");
  gen->add_option("--payload-dim", spec.payload_dim, "Image payload length");
  gen->add_option("--noise", spec.noise_sigma, "Payload noise standard deviation");
  gen->add_option("--train-outfits", spec.train_outfits, "Training outfits");
  gen->add_option("--valid-outfits", spec.valid_outfits, "Validation outfits");
  gen->add_option("--test-outfits", spec.test_outfits, "Test outfits");
  gen->add_flag("--disjoint", spec.disjoint, "Keep items of different splits disjoint");

  // train cp / train cir
  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);
  auto* train_cp = train->add_subcommand("cp", "Compatibility pre-training");
  auto* train_cir = train->add_subcommand("cir", "Complementary item retrieval fine-tuning");
  DataOptions cp_data, cir_data;
  ModelOptions cp_model, cir_model;
  TrainOptions cp_train, cir_train;
  std::string cp_out, cir_out, cir_init;
  bool cir_scratch = false;
  cp_data.add_to(train_cp);
  cp_model.add_to(train_cp);
  cp_train.add_to(train_cp);
  train_cp->add_option("--out", cp_out, "Checkpoint to write")->required();
  cir_data.add_to(train_cir);
  cir_model.add_to(train_cir);
  cir_train.add_to(train_cir);
  train_cir->add_option("--out", cir_out, "Checkpoint to write")->required();
  auto* init_opt = train_cir->add_option("--init", cir_init, "CP checkpoint to start from");
  auto* scratch_opt = train_cir->add_flag("--scratch", cir_scratch, "Start from random weights");
  init_opt->excludes(scratch_opt);
  train_cir->parse_complete_callback([init_opt, scratch_opt] {
    if (init_opt->count() == 0 && scratch_opt->count() == 0) {
      throw CLI::ValidationError("train cir", "needs --init <checkpoint> or --scratch");
    }
  });

  // build-index
  auto* build = app.add_subcommand("build-index", "Embed the catalog into an index file");
  DataOptions build_data;
  std::string build_ckpt, build_out;
  build_data.add_to(build);
  build->add_option("--checkpoint", build_ckpt, "Model checkpoint")->required();
  build->add_option("--out", build_out, "Index file to write")->required();

  // eval cp|fitb|cir
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->require_subcommand(1);
  struct EvalOptions {
    DataOptions data;
    std::string checkpoint;
    std::string split = "test";
    std::string report;
    std::uint64_t seed = 0;
  };
  EvalOptions eval_cp_opts, eval_fitb_opts, eval_cir_opts;
  std::string fitb_mode = "auto";
  std::string cir_index;
  std::string cir_ks = "1,5,10,30,50";
  auto add_eval = [&](const char* name, const char* help, EvalOptions& o) {
    auto* sub = eval->add_subcommand(name, help);
    o.data.add_to(sub);
    sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    sub->add_option("--split", o.split, "valid or test")->check(CLI::IsMember({"valid", "test"}));
    sub->add_option("--report", o.report, "Write the full JSON report here");
    sub->add_option("--seed", o.seed, "Seed for derived question sets");
    return sub;
  };
  auto* eval_cp = add_eval("cp", "Compatibility AUC", eval_cp_opts);
  auto* eval_fitb = add_eval("fitb", "Fill-in-the-blank accuracy", eval_fitb_opts);
  eval_fitb->add_option("--mode", fitb_mode, "cp, cir or auto (every head present)")
      ->check(CLI::IsMember({"cp", "cir", "auto"}));
  auto* eval_cir = add_eval("cir", "Retrieval recall@k", eval_cir_opts);
  eval_cir->add_option("--index", cir_index, "Prebuilt index (default: build in memory)");
  eval_cir->add_option("--k", cir_ks, "Comma separated k values");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  DataOptions serve_data;
  std::string serve_ckpt, serve_index, serve_cp_ckpt, host = "127.0.0.1";
  int port = 8080;
  serve_data.add_to(serve);
  serve->add_option("--checkpoint", serve_ckpt, "Retrieval checkpoint")->required();
  serve->add_option("--index", serve_index, "Index built from that checkpoint")->required();
  serve->add_option("--cp-checkpoint", serve_cp_ckpt, "Compatibility checkpoint, when separate");
  serve->add_option("--host", host, "Address to bind");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  // index-size
  auto* sizes = app.add_subcommand("index-size", "Compare single-embedding and subspace index sizes");
  std::size_t size_items = 1000, size_dim = 128;
  std::vector<std::size_t> size_categories{11};
  std::string size_index;
  sizes->add_option("--items", size_items, "Catalog items");
  sizes->add_option("--dim", size_dim, "Embedding width");
  sizes->add_option("--categories", size_categories, "Category counts to compare");
  sizes->add_option("--index", size_index, "Also report the measured size of this index file");

  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->fallthrough();
    for (CLI::App* leaf : sub->get_subcommands([](const CLI::App*) { return true; })) leaf->fallthrough();
  }
  auto config = std::make_shared<ConfigFile>();
  config->command_path = command_path(app, argc, argv);
  app.config_formatter(config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* target = &app;
    for (const auto& name : config->command_path) {
      for (const CLI::App* s : target->get_subcommands([](const CLI::App*) { return true; })) {
        if (s->get_name() == name) target = s;
      }
    }
    err << target->help();
    return 2;
  }

  auto logger = spdlog::get("outfit");
  if (!logger) logger = spdlog::stderr_color_mt("outfit");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (gen->parsed()) {
      spec.validate();
      const DatasetSplit data = generate_synthetic(spec, gen_seed);
      save_polyvore(data, gen_out);
      out << json{{"out", gen_out},
                  {"items", data.catalog.size()},
                  {"train", data.train.size()},
                  {"valid", data.valid.size()},
                  {"test", data.test.size()}}
                 .dump()
          << "\n";
      return 0;
    }

    if (train_cp->parsed()) {
      const DatasetSplit data = cp_data.load();
      const ModelConfig mc = cp_model.build(data);
      const TrainConfig tc = cp_train.build(false);
      MetricsSink sink(cp_train.metrics, out);
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochMetrics& m) { sink(m); };
      hooks.stop_after = cp_train.stop_after;
      hooks.reject_negative = planted_rule_reject(data);
      std::optional<Checkpoint> resume;
      if (!cp_train.resume.empty()) resume = load_checkpoint(cp_train.resume);
      const Checkpoint ck = pretrain_cp(resume ? resume->config : mc, tc, data, hooks,
                                        resume ? &*resume : nullptr);
      save_checkpoint(ck, cp_out);
      spdlog::info("wrote {} (fingerprint {})", cp_out, hex64(fingerprint(ck)));
      return 0;
    }

    if (train_cir->parsed()) {
      const DatasetSplit data = cir_data.load();
      const TrainConfig tc = cir_train.build(true);
      std::optional<Checkpoint> init;
      ModelConfig mc;
      if (!cir_init.empty()) {
        init = load_checkpoint(cir_init);
        mc = cir_config(init->config);
      } else {
        mc = cir_config(cir_model.build(data));
      }
      MetricsSink sink(cir_train.metrics, out);
      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochMetrics& m) { sink(m); };
      hooks.stop_after = cir_train.stop_after;
      std::optional<Checkpoint> resume;
      if (!cir_train.resume.empty()) resume = load_checkpoint(cir_train.resume);
      const Checkpoint ck = finetune_cir(resume ? resume->config : mc, tc, data,
                                         init ? &*init : nullptr, hooks, resume ? &*resume : nullptr);
      save_checkpoint(ck, cir_out);
      spdlog::info("wrote {} (fingerprint {})", cir_out, hex64(fingerprint(ck)));
      return 0;
    }

    if (build->parsed()) {
      const Checkpoint ck = load_checkpoint(build_ckpt);
      const DatasetSplit data = build_data.load();
      const auto model = instantiate(ck);
      const EmbeddingIndex index = build_index(data.catalog, *model);
      save_index(index, build_out);
      out << json{{"out", build_out},
                  {"items", index.size()},
                  {"dim", index.dim()},
                  {"fingerprint", hex64(index.model_fingerprint())},
                  {"header_bytes", index.header_bytes()},
                  {"embedding_bytes", index.embedding_bytes()},
                  {"file_bytes", index.file_bytes()}}
                 .dump()
          << "\n";
      return 0;
    }

    auto emit = [&](const EvalReport& report, const std::string& path) {
      if (!path.empty()) write_text(path, report.to_json().dump(2) + "\n");
      out << json{{"task", report.task}, {"metrics", report.metrics}, {"queries", report.query_count}}.dump()
          << "\n";
    };

    if (eval_cp->parsed()) {
      const Checkpoint ck = load_checkpoint(eval_cp_opts.checkpoint);
      const DatasetSplit data = eval_cp_opts.data.load();
      const auto model = instantiate(ck);
      const auto labelled = compat_set(data, eval_cp_opts.split, eval_cp_opts.seed, planted_rule_reject(data));
      emit(cp_report(*model, data, labelled, eval_cp_opts.seed), eval_cp_opts.report);
      return 0;
    }

    if (eval_fitb->parsed()) {
      const Checkpoint ck = load_checkpoint(eval_fitb_opts.checkpoint);
      const DatasetSplit data = eval_fitb_opts.data.load();
      const auto model = instantiate(ck);
      if (fitb_mode == "cp" && !ck.config.cp_head) throw ConfigError("checkpoint has no CP head");
      if (fitb_mode == "cir" && !ck.config.cir_head) throw ConfigError("checkpoint has no CIR head");
      const auto questions = fitb_set(data, eval_fitb_opts.split, eval_fitb_opts.seed);
      EvalReport report = fitb_report(*model, data, questions, eval_fitb_opts.seed);
      if (fitb_mode != "auto") {
        const std::string drop = fitb_mode == "cp" ? "cir" : "cp";
        report.metrics.erase("accuracy_" + drop);
        report.metrics.erase("ties_" + drop);
        report.records.erase(drop);
      }
      emit(report, eval_fitb_opts.report);
      return 0;
    }

    if (eval_cir->parsed()) {
      const Checkpoint ck = load_checkpoint(eval_cir_opts.checkpoint);
      const DatasetSplit data = eval_cir_opts.data.load();
      const auto model = instantiate(ck);
      const EmbeddingIndex index = cir_index.empty() ? build_index(data.catalog, *model) : load_index(cir_index);
      require_fingerprint(index, fingerprint(*model));
      const auto queries =
          make_recall_queries(data.catalog, split_outfits(data, eval_cir_opts.split), eval_cir_opts.seed);
      emit(cir_report(*model, index, queries, parse_ks(cir_ks), eval_cir_opts.seed), eval_cir_opts.report);
      return 0;
    }

    if (serve->parsed()) {
      const Checkpoint ck = load_checkpoint(serve_ckpt);
      std::shared_ptr<const OutfitModel> model = instantiate(ck);
      std::shared_ptr<const OutfitModel> cp_model;
      if (!serve_cp_ckpt.empty()) cp_model = instantiate(load_checkpoint(serve_cp_ckpt));
      auto index = std::make_shared<const EmbeddingIndex>(load_index(serve_index));
      auto catalog = std::make_shared<const Catalog>(serve_data.load().catalog);
      Service service;
      const int bound = service.bind(host, port);
      service.set_snapshot(make_snapshot(model, cp_model, index, catalog));
      out << "listening on http://" << host << ":" << bound << std::endl;
      g_stop_requested.store(false);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::thread watcher([&] {
        while (!g_stop_requested.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        service.stop();
      });
      service.run();
      g_stop_requested.store(true);
      watcher.join();
      return 0;
    }

    if (sizes->parsed()) {
      json rows = json::array();
      for (std::size_t c : size_categories) {
        const auto cmp = compare_index_sizes(size_items, c, size_dim);
        rows.push_back({{"items", cmp.items},
                        {"categories", cmp.categories},
                        {"dim", cmp.dim},
                        {"single_embedding_bytes", cmp.single_bytes},
                        {"subspace_bytes", cmp.subspace_bytes},
                        {"ratio", cmp.ratio}});
      }
      json result{{"comparisons", rows}};
      if (!size_index.empty()) {
        const EmbeddingIndex index = load_index(size_index);
        result["index"] = {{"path", size_index},
                           {"items", index.size()},
                           {"dim", index.dim()},
                           {"header_bytes", index.header_bytes()},
                           {"embedding_bytes", index.embedding_bytes()},
                           {"file_bytes", std::filesystem::file_size(size_index)}};
      }
      out << result.dump() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace outfit::cli
