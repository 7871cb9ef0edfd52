// idpf: command line front end for benchmark generation, training, detection,
// attacks, evaluation and plotting. Every run writes into a fresh directory.

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idpf/checkpoint.hpp"
#include "idpf/detector.hpp"
#include "idpf/error.hpp"
#include "idpf/evalkit.hpp"
#include "idpf/evasion.hpp"
#include "idpf/idmodel.hpp"
#include "idpf/plot.hpp"
#include "idpf/synthfaces.hpp"
#include "idpf/zoo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace idpf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::InvalidRange:
      return kExitConfig;
    case ErrorCode::FileNotFound:
    case ErrorCode::ParseError:
    case ErrorCode::CorruptCheckpoint:
    case ErrorCode::VersionMismatch:
    case ErrorCode::SingleClassOnly:
    case ErrorCode::InsufficientSamples:
    case ErrorCode::FakeInTrainSet:
    case ErrorCode::EmptyIdentity:
    case ErrorCode::MissingCounterpart:
    case ErrorCode::CodecFailure:
    case ErrorCode::NoCorrectlyDetectedFakes:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

/// Reads a JSON object of option names to values. Nested objects flatten with
/// '_' so a saved train config (lr_decay.factor) maps onto --lr_decay_factor.
/// A resolved-config snapshot is accepted as is: its "options" member is used.
/// Items are routed to whichever subcommand was selected on the command line.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* app) : app_(app) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (j.contains("options")) j = j["options"];
    std::vector<CLI::ConfigItem> items;
    flatten(j, "", items);
    const auto subs = app_->get_subcommands();
    if (!subs.empty()) {
      for (auto& item : items) item.parents = {subs.front()->get_name()};
    }
    return items;
  }

 private:
  const CLI::App* app_;

  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void flatten(const json& j, const std::string& prefix, std::vector<CLI::ConfigItem>& out) {
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    for (const auto& [key, v] : j.items()) {
      const std::string name = prefix.empty() ? key : prefix + "_" + key;
      if (v.is_object()) {
        flatten(v, name, out);
        continue;
      }
      if (v.is_null()) continue;  // unset option in a resolved config
      CLI::ConfigItem item;
      item.name = name;
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(v));
      }
      out.push_back(std::move(item));
    }
  }
};

struct Common {
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool needs_out = true) {
  sub->add_option("--seed", c.seed, "Global seed")->capture_default_str();
  auto* out = sub->add_option("--out", c.out, "Fresh output directory for this run");
  if (needs_out) out->required();
}

fs::path fresh_run_dir(const std::string& out) {
  const fs::path dir(out);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    fail(ErrorCode::ConfigInvalid, "output directory " + out + " exists and is not empty");
  }
  fs::create_directories(dir);
  return dir;
}

json typed_value(const std::string& text) {
  if (text == "true" || text == "false") return text == "true";
  const auto* end = text.data() + text.size();
  long long i = 0;
  if (auto [ptr, ec] = std::from_chars(text.data(), end, i); ec == std::errc() && ptr == end && !text.empty()) return i;
  double v = 0.0;
  if (auto [ptr, ec] = std::from_chars(text.data(), end, v);
      ec == std::errc() && ptr == end && !text.empty() && std::isfinite(v))
    return v;
  return text;
}

std::vector<std::string> default_values(const std::string& text) {
  if (text == "{}" || text == "[]") return {};
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') return {text};
  std::vector<std::string> out;
  std::stringstream ss(text.substr(1, text.size() - 2));
  for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
  return out;
}

/// Every option of the subcommand with its effective value.
json resolved_options(const CLI::App* sub) {
  json opts = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->results();
    } else if (!opt->get_default_str().empty()) {
      values = default_values(opt->get_default_str());
    }
    json typed = json::array();
    for (const auto& v : values) typed.push_back(typed_value(v));
    if (opt->get_expected_max() == 0) {
      opts[name] = opt->count() > 0;
    } else if (typed.empty()) {
      opts[name] = nullptr;
    } else if (opt->get_expected_max() > 1) {
      opts[name] = typed;
    } else {
      opts[name] = typed.front();
    }
  }
  return opts;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::FileNotFound, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::FileNotFound, "cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void write_run_snapshot(const fs::path& dir, const CLI::App* sub) {
  write_json(dir / "resolved_config.json", {{"tool", "idpf"},
                                            {"version", IDPF_VERSION},
                                            {"subcommand", sub->get_name()},
                                            {"options", resolved_options(sub)}});
}

DatasetManifest load_manifest(const std::string& data) {
  const fs::path p = fs::path(data) / "manifest.csv";
  if (!fs::exists(p)) fail(ErrorCode::FileNotFound, p.string());
  return DatasetManifest::load(p);
}

std::vector<SampleRecord> select_records(const DatasetManifest& m, const std::string& split, int limit) {
  std::vector<SampleRecord> out;
  if (split == "all") {
    out = m.records();
  } else if (split == "test") {
    out = m.select(Split::Test);
  } else if (split == "train") {
    out = m.select(Split::Train);
  } else {
    fail(ErrorCode::ConfigInvalid, "split must be train, test or all");
  }
  if (limit > 0 && out.size() > static_cast<std::size_t>(limit)) out.resize(limit);
  return out;
}

// --------------------------------------------------------------------------- options

struct TrainFlags {
  idmodel::TrainConfig cfg;
  std::string data, extractor;
};

void add_train_flags(CLI::App* sub, TrainFlags& t, bool finetune) {
  auto& c = t.cfg;
  if (!finetune) c.n_blocks = 0;
  sub->add_option("--data", t.data, "Benchmark directory containing manifest.csv")->required();
  sub->add_option("--extractor", t.extractor, "Pretrained extractor file (default: random init from --seed)");
  sub->add_option("--epochs", c.epochs)->capture_default_str();
  sub->add_option("--batch_size", c.batch_size)->capture_default_str();
  sub->add_option("--initial_lr", c.initial_lr)->capture_default_str();
  sub->add_option("--lr_decay_factor", c.lr_decay.factor)->capture_default_str();
  sub->add_option("--lr_decay_every_epochs", c.lr_decay.every_epochs)->capture_default_str();
  sub->add_option("--optimizer", c.optimizer)->capture_default_str();
  sub->add_option("--feature_scale", c.feature_scale)->capture_default_str();
  if (finetune) {
    sub->add_option("--mask_refresh_epochs", c.mask_refresh_epochs)->capture_default_str();
    sub->add_option("--alpha", c.alpha)->capture_default_str();
    sub->add_option("--trainable_stages", c.trainable_stages)->capture_default_str();
    sub->add_option("--n_blocks", c.n_blocks)->capture_default_str();
    sub->add_option("--block_size", c.block_size)->capture_default_str();
    sub->add_option("--fill_value", c.fill_value)->capture_default_str();
  }
}

idmodel::EmbeddingBackend extractor_or_random(const std::string& file, std::uint64_t seed) {
  if (!file.empty()) return load_backbone(file);
  return idmodel::EmbeddingBackend(zoo::standard_extractors().front().arch, seed);
}

std::vector<std::shared_ptr<const idmodel::IdentificationModel>> load_models(const std::vector<std::string>& files) {
  std::vector<std::shared_ptr<const idmodel::IdentificationModel>> out;
  for (const auto& f : files) out.push_back(std::make_shared<idmodel::IdentificationModel>(load_checkpoint(f)));
  return out;
}

std::unique_ptr<detector::Detector> make_detector(const std::vector<std::string>& files, const std::string& metric,
                                                  const std::string& statistic) {
  auto models = load_models(files);
  if (models.size() == 1) {
    return std::make_unique<detector::SingleModelDetector>(models.front(), detector::parse_metric(metric));
  }
  return std::make_unique<detector::DetectorEnsemble>(std::move(models), detector::parse_statistic(statistic));
}

// --------------------------------------------------------------------------- commands

struct GenFlags {
  synth::BenchmarkSpec spec;
  std::vector<double> lambda{0.6, 0.9};
  std::vector<std::string> mechanisms{"latent_blend", "masked_pixel_blend"};
};

void cmd_gen(const CLI::App* sub, const Common& c, GenFlags g) {
  g.spec.seed = c.seed;
  g.spec.lambda_lo = g.lambda.at(0);
  g.spec.lambda_hi = g.lambda.at(1);
  g.spec.mechanisms.clear();
  for (const auto& m : g.mechanisms) g.spec.mechanisms.push_back(synth::parse_mechanism(m));
  const auto dir = fresh_run_dir(c.out);
  const auto bench = synth::build_benchmark(g.spec);
  synth::write_benchmark(bench, dir);
  write_run_snapshot(dir, sub);
  std::cout << "wrote " << bench.manifest.records().size() << " records to " << dir.string() << '\n';
}

struct PretrainFlags {
  std::string name = "A";
  int classes = 0, epochs = 0, samples_per_epoch = 0;
};

void cmd_pretrain(const CLI::App* sub, const Common& c, const PretrainFlags& p) {
  std::optional<zoo::ExtractorSpec> spec;
  for (const auto& s : zoo::standard_extractors()) {
    if (s.name == p.name) spec = s;
  }
  if (!spec) fail(ErrorCode::ConfigInvalid, "unknown extractor " + p.name);
  if (p.classes > 0) spec->pretrain.n_classes = p.classes;
  if (p.epochs > 0) spec->pretrain.epochs = p.epochs;
  if (p.samples_per_epoch > 0) spec->pretrain.samples_per_epoch = p.samples_per_epoch;
  if (sub->count("--seed") > 0) spec->init_seed = c.seed;
  const auto dir = fresh_run_dir(c.out);
  idmodel::PretrainReport rep;
  const auto backbone = zoo::pretrain_extractor(*spec, &rep);
  save_backbone(backbone, dir / "extractor.idpf");
  write_json(dir / "pretrain_report.json",
             {{"spec", spec->to_json()}, {"epoch_loss", rep.epoch_loss}, {"epoch_accuracy", rep.epoch_accuracy}});
  write_run_snapshot(dir, sub);
  std::cout << "extractor " << spec->name << " -> " << (dir / "extractor.idpf").string() << '\n';
}

void cmd_train(const CLI::App* sub, const Common& c, const TrainFlags& t, bool finetune) {
  t.cfg.validate();
  const auto manifest = load_manifest(t.data);
  const DirectoryImageStore store(t.data);
  const auto backbone = extractor_or_random(t.extractor, c.seed);
  const auto dir = fresh_run_dir(c.out);
  idmodel::TrainReport rep;
  const auto model = finetune ? idmodel::finetune_attention(manifest, store, backbone, t.cfg, c.seed, &rep)
                              : idmodel::train_baseline(manifest, store, backbone, t.cfg, c.seed, &rep);
  save_checkpoint(model, dir / "model.idpf");
  write_json(dir / "train_report.json", {{"train_config", t.cfg.to_json()},
                                         {"seed", c.seed},
                                         {"snapshots_taken", rep.snapshots_taken},
                                         {"epoch_loss", rep.epoch_loss},
                                         {"final_train_accuracy", rep.final_train_accuracy}});
  write_run_snapshot(dir, sub);
  std::cout << (finetune ? "finetuned" : "trained") << " model over " << model.num_classes()
            << " identities, train accuracy " << rep.final_train_accuracy << '\n';
}

struct DetectFlags {
  std::string data;
  std::vector<std::string> models;
  std::string metric = "max", statistic = "min", split = "test";
  std::optional<double> threshold;
  int limit = 0;
};

void cmd_detect(const CLI::App* sub, const Common& c, const DetectFlags& d) {
  const auto manifest = load_manifest(d.data);
  const DirectoryImageStore store(d.data);
  const auto det = make_detector(d.models, d.metric, d.statistic);
  const auto records = select_records(manifest, d.split, d.limit);
  if (records.empty()) fail(ErrorCode::ConfigInvalid, "no records selected");
  const auto scored = evalkit::score_samples(*det, records, store);
  double threshold = 0.0;
  if (d.threshold) {
    threshold = *d.threshold;
  } else {
    try {
      threshold = evalkit::compute_eer_threshold(scored).threshold;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingleClassOnly) throw;
      fail(ErrorCode::ConfigInvalid, "selection holds one class only; pass --threshold");
    }
  }
  const auto dir = fresh_run_dir(c.out);
  std::vector<detector::ScoreRow> rows;
  for (const auto& s : scored) {
    rows.push_back({s.sample_id, det->describe(), s.score, detector::classify(s.score, threshold), threshold, s.is_fake});
    std::cout << s.sample_id << ' ' << detector::to_string(rows.back().verdict) << ' ' << s.score << '\n';
  }
  detector::save_score_dump(rows, dir / "scores.csv");
  write_run_snapshot(dir, sub);
}

struct AttackFlags {
  std::string data, objective = "ensemble_embed", metric = "max", statistic = "min", surrogate;
  std::vector<std::string> models, extractors;
  std::string norm_order = "inf", epsilon = "4/255", step_size = "1/255";
  int iterations = 20;
  std::size_t max_attacks = 0;
  std::vector<std::string> epsilons;
  bool save_adv = false;
};

evasion::ObjectiveFactory make_factory(const AttackFlags& a, const DatasetManifest& manifest,
                                       const ImageStore& store,
                                       const std::vector<std::shared_ptr<const idmodel::IdentificationModel>>& det_models) {
  if (a.objective == "max_prob") {
    std::shared_ptr<const idmodel::IdentificationModel> surrogate =
        a.surrogate.empty() ? det_models.front()
                            : std::make_shared<idmodel::IdentificationModel>(load_checkpoint(a.surrogate));
    return [surrogate](const SampleRecord&, const FaceImage&) {
      return std::make_unique<evasion::MaxProbObjective>(surrogate);
    };
  }
  if (a.objective != "embed_distance" && a.objective != "ensemble_embed") {
    fail(ErrorCode::ConfigInvalid, "objective must be max_prob, embed_distance or ensemble_embed");
  }
  std::vector<std::shared_ptr<const idmodel::EmbeddingBackend>> extractors;
  for (const auto& f : a.extractors) extractors.push_back(std::make_shared<idmodel::EmbeddingBackend>(load_backbone(f)));
  if (extractors.empty()) {
    extractors.push_back(std::make_shared<idmodel::EmbeddingBackend>(det_models.front()->backbone()));
  }
  if (a.objective == "embed_distance" && extractors.size() != 1) {
    fail(ErrorCode::ConfigInvalid, "embed_distance takes exactly one extractor");
  }
  auto bank = std::make_shared<evasion::ReferenceBank>(manifest, store);
  return [extractors, bank](const SampleRecord& rec, const FaceImage&) {
    return std::make_unique<evasion::EmbedDistanceObjective>(extractors, bank->reference(*rec.source_id));
  };
}

void cmd_attack(const CLI::App* sub, const Common& c, const AttackFlags& a) {
  evasion::AttackBudget budget;
  budget.norm = evasion::parse_norm(a.norm_order);
  budget.epsilon = evasion::parse_fraction(a.epsilon);
  budget.iterations = a.iterations;
  budget.step_size = std::min(evasion::parse_fraction(a.step_size), budget.epsilon);
  budget.validate();

  const auto manifest = load_manifest(a.data);
  const DirectoryImageStore store(a.data);
  const auto models = load_models(a.models);
  std::unique_ptr<detector::Detector> det;
  if (models.size() == 1) {
    det = std::make_unique<detector::SingleModelDetector>(models.front(), detector::parse_metric(a.metric));
  } else {
    det = std::make_unique<detector::DetectorEnsemble>(models, detector::parse_statistic(a.statistic));
  }
  const auto factory = make_factory(a, manifest, store, models);
  const auto fakes = manifest.fakes();
  const auto reals = manifest.reals(Split::Test);
  const evasion::AsrOptions opts{a.max_attacks};
  const auto dir = fresh_run_dir(c.out);
  const json attack_desc{{"objective", a.objective}, {"budget", budget.to_json()},
                         {"epsilon_text", a.epsilon}, {"seed", c.seed}};

  if (!a.epsilons.empty()) {
    std::vector<double> eps;
    for (const auto& e : a.epsilons) eps.push_back(evasion::parse_fraction(e));
    const auto points = evalkit::budget_sweep(*det, fakes, reals, store, factory, budget, eps, opts);
    json arr = json::array();
    for (const auto& p : points) {
      arr.push_back({{"epsilon", p.epsilon}, {"asr", p.asr}, {"n_attacked", p.n_attacked},
                     {"mean_linf", p.mean_linf}, {"mean_l2", p.mean_l2}, {"mean_rms", p.mean_rms}});
      std::cout << "epsilon " << p.epsilon << " asr " << p.asr << '\n';
    }
    write_json(dir / "budget_sweep.json",
               {{"attack", attack_desc}, {"points", arr}, {"config_hash", evalkit::config_hash(attack_desc)}});
  } else {
    auto attack = evasion::make_bim_attack(factory, budget);
    if (a.save_adv) {
      const fs::path adv_dir = dir / "adversarial";
      attack = [attack, adv_dir](const SampleRecord& rec, const FaceImage& x) {
        auto r = attack(rec, x);
        fs::path p = adv_dir / rec.image_ref;
        p.replace_extension(".adv.png");
        fs::create_directories(p.parent_path());
        write_image(r.best, p);
        return r;
      };
    }
    auto rep = evasion::measure_asr(*det, fakes, reals, store, attack, opts);
    rep.attack = attack_desc;
    json j = rep.to_json();
    j["config_hash"] = evalkit::config_hash(attack_desc);
    write_json(dir / "asr_report.json", j);
    std::cout << "threshold " << rep.threshold << " attacked " << rep.n_attacked << " evaded " << rep.n_evaded
              << " asr " << rep.asr << " epsilon " << a.epsilon << " iterations " << budget.iterations << '\n';
  }
  write_run_snapshot(dir, sub);
}

struct EvalFlags {
  std::string scores, data, extractor;
  std::vector<std::string> models;
  std::vector<int> jpeg_qualities;
  int pairs = 0, saliency = 0, embeddings = 0;
  std::string metric = "max", statistic = "min";
};

void cmd_eval(const CLI::App* sub, const Common& c, const EvalFlags& e) {
  if (e.scores.empty() && e.data.empty()) fail(ErrorCode::ConfigInvalid, "pass --scores or --data");
  std::vector<evalkit::ScoredSample> scored;
  if (!e.scores.empty()) {
    for (const auto& r : detector::load_score_dump(e.scores)) scored.push_back({r.sample_id, r.is_fake, r.value});
  }
  std::optional<evalkit::RocReport> roc;
  if (!scored.empty()) roc = evalkit::compute_roc(scored);

  const auto dir = fresh_run_dir(c.out);
  json metrics{{"seed", c.seed}};
  if (roc) {
    metrics["roc"] = roc->summary();
    std::ofstream f(dir / "roc.csv");
    roc->write_csv(f);
    std::cout << "auc " << roc->auc << " eer " << roc->eer << " threshold " << roc->eer_threshold << '\n';
  }
  if (!e.data.empty()) {
    const auto manifest = load_manifest(e.data);
    const DirectoryImageStore store(e.data);
    const auto tests = manifest.select(Split::Test);
    if (!e.jpeg_qualities.empty()) {
      const auto det = make_detector(e.models, e.metric, e.statistic);
      json arr = json::array();
      for (const auto& q : evalkit::jpeg_quality_sweep(*det, tests, store, e.jpeg_qualities)) {
        arr.push_back({{"quality", q.quality}, {"auc", q.roc.auc}, {"eer", q.roc.eer}});
        std::cout << "qf " << q.quality << " auc " << q.roc.auc << '\n';
      }
      metrics["jpeg_sweep"] = arr;
    }
    if (e.pairs > 0) {
      const auto z = extractor_or_random(e.extractor, c.seed);
      const auto study = evalkit::pair_similarity_study(z, manifest, store, e.pairs, c.seed);
      metrics["pair_similarity"] = study.to_json();
      std::cout << study.to_json().dump() << '\n';
    }
    if (e.saliency > 0) {
      if (e.models.empty()) fail(ErrorCode::ConfigInvalid, "--saliency needs --model");
      const auto model = load_checkpoint(e.models.front());
      json arr = json::array();
      int n = 0;
      for (const auto& r : tests) {
        if (n++ >= e.saliency) break;
        const auto map = evalkit::smoothgrad_saliency(model, store.load(r.image_ref), 25, 0.1, c.seed);
        arr.push_back({{"sample_id", r.image_ref}, {"above_0.2", map.count_above(0.2)}});
      }
      metrics["saliency"] = {{"n_samples", 25}, {"sigma", 0.1}, {"maps", arr}};
    }
    if (e.embeddings > 0) {
      const auto z = extractor_or_random(e.extractor, c.seed);
      auto records = manifest.records();
      if (records.size() > static_cast<std::size_t>(e.embeddings)) records.resize(e.embeddings);
      std::ofstream f(dir / "embeddings.csv");
      evalkit::write_embeddings(evalkit::export_embeddings(z, records, store), f);
    }
  }
  const json cfg = resolved_options(sub);
  metrics["config_hash"] = evalkit::config_hash(cfg);
  write_json(dir / "metrics.json", metrics);
  write_run_snapshot(dir, sub);
}

struct ReportFlags {
  std::vector<std::string> scores, sweeps, metrics;
};

void cmd_report(const CLI::App* sub, const Common& c, const ReportFlags& r) {
  if (r.scores.empty() && r.sweeps.empty() && r.metrics.empty()) {
    fail(ErrorCode::ConfigInvalid, "nothing to plot: pass --scores, --sweep or --metrics");
  }
  const auto dir = fresh_run_dir(c.out);
  if (!r.scores.empty()) {
    std::vector<plot::Series> series;
    for (const auto& f : r.scores) {
      std::vector<evalkit::ScoredSample> s;
      for (const auto& row : detector::load_score_dump(f)) s.push_back({row.sample_id, row.is_fake, row.value});
      const auto roc = evalkit::compute_roc(s);
      char label[64];
      std::snprintf(label, sizeof label, "%s (%.3f)", fs::path(f).parent_path().filename().string().c_str(), roc.auc);
      series.push_back({label, roc.fpr, roc.tpr});
    }
    plot::line_plot(dir / "roc.png", {"ROC (real = positive)", "false positive rate", "true positive rate"}, series);
  }
  if (!r.sweeps.empty()) {
    std::vector<plot::Series> series;
    for (const auto& f : r.sweeps) {
      const auto j = read_json(f);
      plot::Series s{fs::path(f).parent_path().filename().string(), {}, {}};
      for (const auto& p : j.at("points")) {
        s.x.push_back(p.at("epsilon").get<double>() * 255.0);
        s.y.push_back(p.at("asr").get<double>());
      }
      series.push_back(std::move(s));
    }
    plot::line_plot(dir / "budget_sweep.png", {"ASR vs budget", "epsilon x 255", "ASR"}, series);
  }
  if (!r.metrics.empty()) {
    std::vector<plot::Series> series;
    for (const auto& f : r.metrics) {
      const auto j = read_json(f);
      if (!j.contains("jpeg_sweep")) continue;
      plot::Series s{fs::path(f).parent_path().filename().string(), {}, {}};
      for (const auto& p : j["jpeg_sweep"]) {
        s.x.push_back(p.at("quality").get<double>());
        s.y.push_back(p.at("auc").get<double>());
      }
      series.push_back(std::move(s));
    }
    if (!series.empty()) plot::line_plot(dir / "jpeg_sweep.png", {"AUC vs JPEG quality", "quality", "AUC"}, series);
  }
  write_run_snapshot(dir, sub);
  std::cout << "plots in " << dir.string() << '\n';
  (void)c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identity-probability face-swap detection toolkit"};
  app.set_version_flag("--version", std::string(IDPF_VERSION));
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "JSON file with option values for the subcommand");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);

  Common common;

  GenFlags gen;
  auto* s_gen = app.add_subcommand("gen", "Generate a synthetic benchmark");
  add_common(s_gen, common);
  s_gen->add_option("--ids", gen.spec.n_ids, "Number of identities")->capture_default_str();
  s_gen->add_option("--per_id_train", gen.spec.per_id_train)->capture_default_str();
  s_gen->add_option("--real_test", gen.spec.n_real_test)->capture_default_str();
  s_gen->add_option("--fake_test", gen.spec.n_fake_test)->capture_default_str();
  s_gen->add_option("--lambda", gen.lambda, "Blend range lo hi")->expected(2)->capture_default_str();
  s_gen->add_option("--mechanisms", gen.mechanisms)->capture_default_str();
  s_gen->add_option("--label_prefix", gen.spec.label_prefix)->capture_default_str();

  PretrainFlags pre;
  auto* s_pre = app.add_subcommand("pretrain", "Pretrain a standard identity extractor");
  add_common(s_pre, common);
  s_pre->add_option("--extractor", pre.name, "A, B, C or D")->capture_default_str();
  s_pre->add_option("--classes", pre.classes, "Override pretraining identities");
  s_pre->add_option("--epochs", pre.epochs, "Override pretraining epochs");
  s_pre->add_option("--samples_per_epoch", pre.samples_per_epoch, "Override samples per epoch");

  TrainFlags train, tune;
  auto* s_train = app.add_subcommand("train", "Train the identification head on a frozen extractor");
  add_common(s_train, common);
  add_train_flags(s_train, train, false);
  auto* s_tune = app.add_subcommand("finetune", "Attention-based finetuning with masks and label smoothing");
  add_common(s_tune, common);
  add_train_flags(s_tune, tune, true);

  DetectFlags det;
  auto* s_det = app.add_subcommand("detect", "Score images and print verdicts");
  add_common(s_det, common);
  s_det->add_option("--data", det.data)->required();
  s_det->add_option("--model", det.models, "One checkpoint, or several for an ensemble")->required();
  s_det->add_option("--metric", det.metric, "max, neg_variance or neg_entropy")->capture_default_str();
  s_det->add_option("--statistic", det.statistic, "Ensemble statistic: min or neg_range")->capture_default_str();
  s_det->add_option("--split", det.split, "train, test or all")->capture_default_str();
  s_det->add_option("--threshold", det.threshold, "Decision threshold (default: EER on the selection)");
  s_det->add_option("--limit", det.limit, "Score only the first N selected records");

  AttackFlags atk;
  auto* s_atk = app.add_subcommand("attack", "Grey-box evasion attack and ASR measurement");
  add_common(s_atk, common);
  s_atk->add_option("--data", atk.data)->required();
  s_atk->add_option("--model", atk.models, "Detector checkpoint(s)")->required();
  s_atk->add_option("--metric", atk.metric)->capture_default_str();
  s_atk->add_option("--statistic", atk.statistic)->capture_default_str();
  s_atk->add_option("--objective", atk.objective, "max_prob, embed_distance or ensemble_embed")->capture_default_str();
  s_atk->add_option("--surrogate", atk.surrogate, "Surrogate checkpoint for max_prob");
  s_atk->add_option("--extractors", atk.extractors, "Extractor files for embedding objectives");
  s_atk->add_option("--norm_order", atk.norm_order, "inf or 2")->capture_default_str();
  s_atk->add_option("--epsilon,--budget-eps", atk.epsilon, "Budget, e.g. 4/255")->capture_default_str();
  s_atk->add_option("--iterations,--iters", atk.iterations)->capture_default_str();
  s_atk->add_option("--step_size", atk.step_size)->capture_default_str();
  s_atk->add_option("--max_attacks", atk.max_attacks, "Cap on attacked fakes (0 = all)")->capture_default_str();
  s_atk->add_option("--epsilons", atk.epsilons, "Run a budget sweep over these budgets instead");
  s_atk->add_flag("--save_adv", atk.save_adv, "Write adversarial images with an .adv suffix");

  EvalFlags ev;
  auto* s_ev = app.add_subcommand("eval", "Metrics from score dumps or image sweeps");
  add_common(s_ev, common);
  s_ev->add_option("--scores", ev.scores, "Score dump from detect");
  s_ev->add_option("--data", ev.data, "Benchmark directory for sweeps");
  s_ev->add_option("--model", ev.models);
  s_ev->add_option("--metric", ev.metric)->capture_default_str();
  s_ev->add_option("--statistic", ev.statistic)->capture_default_str();
  s_ev->add_option("--extractor", ev.extractor);
  s_ev->add_option("--jpeg_qualities", ev.jpeg_qualities);
  s_ev->add_option("--pairs", ev.pairs, "Pair-similarity study over N fakes");
  s_ev->add_option("--saliency", ev.saliency, "SmoothGrad statistics over N test images");
  s_ev->add_option("--embeddings", ev.embeddings, "Export embeddings of the first N records");

  ReportFlags rep;
  auto* s_rep = app.add_subcommand("report", "Render plots from earlier outputs");
  add_common(s_rep, common);
  s_rep->add_option("--scores", rep.scores, "Score dumps for ROC curves");
  s_rep->add_option("--sweep", rep.sweeps, "budget_sweep.json files");
  s_rep->add_option("--metrics", rep.metrics, "metrics.json files with JPEG sweeps");

  // empty vector defaults render as "{}", which reads like a value in help
  for (CLI::App* sub : app.get_subcommands({}))
    for (CLI::Option* opt : sub->get_options())
      if (opt->get_default_str() == "{}") opt->default_str("");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*s_gen) cmd_gen(s_gen, common, gen);
    if (*s_pre) cmd_pretrain(s_pre, common, pre);
    if (*s_train) cmd_train(s_train, common, train, false);
    if (*s_tune) cmd_train(s_tune, common, tune, true);
    if (*s_det) cmd_detect(s_det, common, det);
    if (*s_atk) cmd_attack(s_atk, common, atk);
    if (*s_ev) cmd_eval(s_ev, common, ev);
    if (*s_rep) cmd_report(s_rep, common, rep);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
