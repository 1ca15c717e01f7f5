#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "json_input.hpp"
#include "talign/checkpoint.hpp"
#include "talign/corpus.hpp"
#include "talign/curation.hpp"
#include "talign/denoise.hpp"
#include "talign/error.hpp"
#include "talign/eval.hpp"
#include "talign/io.hpp"
#include "talign/language.hpp"
#include "talign/model.hpp"
#include "talign/trainer.hpp"
#include "talign/vtt.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using talign::cli::Field;
using talign::cli::SchemaError;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

class UsageError : public talign::Error {
 public:
  using Error::Error;
};

nlohmann::json parse_json_file(const fs::path& path) {
  const std::string text = talign::read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw talign::ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const fs::path& path, const ojson& j) { talign::write_file_atomic(path, j.dump(2) + "\n"); }

std::string config_value(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Values from a JSON config file fill every option not given on the command
// line. Keys are long option names without the leading dashes.
void apply_config(CLI::App* sub, const std::string& path) {
  const nlohmann::json j = parse_json_file(path);
  if (!j.is_object()) throw SchemaError("$", "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
    if (opt == nullptr) throw UsageError("unknown config key '" + key + "' for " + sub->get_name());
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& item : value) opt->add_result(config_value(item));
    } else {
      opt->add_result(config_value(value));
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("config key '" + key + "': " + e.what());
    }
  }
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

std::vector<std::vector<std::size_t>> video_tokens(const talign::NarratedVideo& v) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& s : v.sentences) out.push_back(s.token_ids);
  return out;
}

ojson matrix_json(const talign::Tensor& t) {
  ojson rows = ojson::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  }
  return rows;
}

talign::Tensor matrix_from(const Field& f) {
  const std::size_t rows = f.size();
  std::size_t cols = 0;
  if (rows > 0) cols = f.at(0).size();
  talign::Tensor t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const Field row = f.at(r);
    if (row.size() != cols) throw SchemaError(row.path(), "rows must all have " + std::to_string(cols) + " entries");
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = row.at(c).number();
      if (!std::isfinite(v)) throw SchemaError(row.at(c).path(), "must be finite");
      t(r, c) = v;
    }
  }
  return t;
}

// Videos are read from {"videos": [...]} or a bare array.
Field video_list(const nlohmann::json& doc, const std::string& name) {
  if (doc.is_array()) return Field(doc, name);
  if (doc.is_object() && doc.contains("videos")) return Field(doc, name).at("videos");
  throw SchemaError(name, "expected an array of videos or an object with 'videos'");
}

// [begin, end) runs of ones.
ojson runs_json(const talign::SentenceMask& m) {
  ojson out = ojson::array();
  std::size_t t = 0;
  while (t < m.length()) {
    if (!m[t]) {
      ++t;
      continue;
    }
    std::size_t e = t;
    while (e < m.length() && m[e]) ++e;
    out.push_back({t, e});
    t = e;
  }
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::size_t videos = 200;
  talign::NoiseModelParams noise;
  talign::CorpusDims dims;
  talign::SyntheticParams synth;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--out", a.out, "Output corpus (JSON Lines)");
  app.add_option("--videos", a.videos, "Number of videos")->capture_default_str();
  app.add_option("--seed", a.noise.seed, "Generator seed")->capture_default_str();
  app.add_option("--frac-alignable", a.noise.frac_alignable, "Fraction of alignable sentences")->capture_default_str();
  app.add_option("--frac-well-aligned", a.noise.frac_well_aligned, "Fraction with ASR equal to the true interval")
      ->capture_default_str();
  app.add_option("--max-offset", a.noise.max_offset_sec, "Largest ASR offset in seconds")->capture_default_str();
  app.add_option("--shuffle-prob", a.noise.order_shuffle_prob, "Probability of swapping neighbouring ASR intervals")
      ->capture_default_str();
  app.add_option("--duration", a.dims.T, "Seconds (feature rows) per video")->capture_default_str();
  app.add_option("--feature-dim", a.dims.C_raw, "Raw feature width")->capture_default_str();
  app.add_option("--sigma", a.synth.sigma, "Feature noise norm per frame")->capture_default_str();
  app.add_option("--topics", a.synth.n_topics, "Latent topics")->capture_default_str();
  app.add_option("--words-per-topic", a.synth.words_per_topic, "Vocabulary words per topic")->capture_default_str();
  app.add_option("--chatter-words", a.synth.chatter_words, "Words never grounded in video")->capture_default_str();
  app.add_option("--filler-words", a.synth.filler_words, "Words shared by all sentences")->capture_default_str();
  app.add_option("--chatter-frac", a.synth.chatter_frac, "Unalignable sentences made of chatter words")
      ->capture_default_str();
}

int run_synth(const SynthArgs& a) {
  require(a.out, "--out");
  a.noise.validate();
  a.synth.validate(a.dims);
  const talign::Corpus corpus = talign::generate_corpus(a.videos, a.noise, a.dims, a.synth);
  std::ostringstream buf;
  talign::save_jsonl(buf, corpus);
  talign::write_file_atomic(a.out, buf.str());
  const auto st = talign::corpus_stats(corpus);
  ojson j;
  j["videos"] = st.videos;
  j["sentences"] = st.sentences;
  j["alignable"] = st.alignable;
  j["well_aligned"] = st.well_aligned;
  j["alignable_fraction"] = st.sentences ? static_cast<double>(st.alignable) / static_cast<double>(st.sentences) : 0.0;
  j["vocab_size"] = a.synth.vocab_size();
  std::cout << j.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string corpus;
  std::string stage = "both";
  std::string ckpt_out;
  std::string ckpt_in;
  talign::TrainConfig train;
  talign::ModelConfig model;
  talign::LossConfig loss;
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--corpus", a.corpus, "Training corpus (JSON Lines)");
  app.add_option("--stage", a.stage, "Stages to run")->check(CLI::IsMember({"1", "2", "both"}))->capture_default_str();
  app.add_option("--ckpt-out", a.ckpt_out, "Output directory for checkpoints and metrics.jsonl");
  app.add_option("--ckpt-in", a.ckpt_in, "Stage-1 checkpoint to resume from (required for --stage 2)");
  app.add_option("--batch-videos", a.train.batch_videos, "Windows per batch")->capture_default_str();
  app.add_option("--window", a.train.window_sec, "Window length in seconds")->capture_default_str();
  app.add_option("--lr", a.train.lr, "Learning rate")->capture_default_str();
  app.add_option("--weight-decay", a.train.weight_decay, "Decoupled weight decay")->capture_default_str();
  app.add_option("--s1-iters", a.train.s1_iters, "Stage-1 iterations")->capture_default_str();
  app.add_option("--s2-iters", a.train.s2_iters, "Stage-2 iterations")->capture_default_str();
  app.add_option("--alpha", a.train.alpha, "Fraction of each batch labelled alignable")->capture_default_str();
  app.add_option("--ema-momentum", a.train.ema_momentum, "Teacher momentum")->capture_default_str();
  app.add_option("--eval-every", a.train.eval_every, "Iterations between held-out evaluations")->capture_default_str();
  app.add_option("--seed", a.train.seed, "Initialisation and sampling seed")->capture_default_str();
  app.add_option("--temperature", a.loss.temperature, "Contrastive temperature")->capture_default_str();
  app.add_option("--layers", a.model.n_layers, "Transformer layers per encoder")->capture_default_str();
  app.add_option("--heads", a.model.n_heads, "Attention heads")->capture_default_str();
  app.add_option("--d-model", a.model.d_model, "Model width")->capture_default_str();
  app.add_option("--d-ff", a.model.d_ff, "Feed-forward width (0: 4 x d-model)")->capture_default_str();
  app.add_option("--max-t", a.model.max_T, "Temporal embedding length")->capture_default_str();
  app.add_option("--text-dim", a.model.text_dim, "Token embedding width")->capture_default_str();
  app.add_option("--vocab-size", a.model.vocab_size, "Token vocabulary (0: from the corpus)")->capture_default_str();
  app.add_flag("--segment-embedding", a.model.segment_embedding, "Add video/text type embeddings")
      ->capture_default_str();
}

int run_train(TrainArgs a) {
  require(a.corpus, "--corpus");
  require(a.ckpt_out, "--ckpt-out");
  const talign::StageSelect stages = a.stage == "1"   ? talign::StageSelect::s1
                                     : a.stage == "2" ? talign::StageSelect::s2
                                                      : talign::StageSelect::both;
  std::optional<talign::Checkpoint> initial;
  if (stages == talign::StageSelect::s2) {
    if (a.ckpt_in.empty()) throw UsageError("--stage 2 needs --ckpt-in");
    if (!fs::exists(a.ckpt_in)) throw UsageError("checkpoint not found: " + a.ckpt_in);
  }
  if (!a.ckpt_in.empty()) initial = talign::load_checkpoint(a.ckpt_in);

  const talign::Corpus corpus = talign::load_jsonl(fs::path(a.corpus));
  if (corpus.empty()) throw UsageError("corpus is empty: " + a.corpus);
  if (a.model.vocab_size == 0) a.model.vocab_size = talign::corpus_vocab_size(corpus);
  if (a.model.c_raw != corpus.front().features.cols()) a.model.c_raw = corpus.front().features.cols();

  fs::create_directories(a.ckpt_out);
  const fs::path dir(a.ckpt_out);
  std::string log;
  talign::RunHooks hooks;
  hooks.on_metrics = [&](const talign::MetricsRecord& r) {
    log += r.to_json() + "\n";
    std::cerr << r.to_json() << "\n";
  };
  hooks.on_checkpoint = [&](int stage, const talign::Checkpoint& c) {
    talign::save_checkpoint(dir / ("ckpt_s" + std::to_string(stage) + ".bin"), c);
  };
  try {
    talign::run_training(a.train, a.loss, a.model, corpus, stages, std::move(initial), hooks);
  } catch (const talign::NumericalError&) {
    talign::write_file_atomic(dir / "metrics.jsonl", log);
    throw;
  }
  talign::write_file_atomic(dir / "metrics.jsonl", log);
  return kOk;
}

// ---------------------------------------------------------------- align

struct AlignArgs {
  std::string ckpt;
  std::string corpus;
  std::string out;
  std::string heatmap_dir;
};

void add_align(CLI::App& app, AlignArgs& a) {
  app.add_option("--ckpt", a.ckpt, "Model checkpoint");
  app.add_option("--corpus", a.corpus, "Corpus (JSON Lines)");
  app.add_option("--out", a.out, "Alignment output (JSON)");
  app.add_option("--heatmap-dir", a.heatmap_dir, "Also write <id>.csv and <id>.pgm heat maps here");
}

int run_align(const AlignArgs& a) {
  require(a.ckpt, "--ckpt");
  require(a.corpus, "--corpus");
  require(a.out, "--out");
  const talign::Checkpoint ckpt = talign::load_checkpoint(a.ckpt);
  const talign::Corpus corpus = talign::load_jsonl(fs::path(a.corpus));
  if (!a.heatmap_dir.empty()) fs::create_directories(a.heatmap_dir);
  ojson videos = ojson::array();
  for (const auto& v : corpus) {
    const auto inf = talign::infer_video(ckpt.config, ckpt.params, v.features, video_tokens(v));
    ojson jv;
    jv["id"] = v.id;
    jv["alignment"] = matrix_json(inf.alignment);
    jv["alignment_dual"] = matrix_json(inf.alignment_dual);
    jv["p_alignable"] = inf.p_alignable;
    videos.push_back(std::move(jv));
    if (!a.heatmap_dir.empty() && inf.alignment.rows() > 0) {
      const fs::path base = fs::path(a.heatmap_dir) / v.id;
      talign::export_heatmap(inf.alignment, base.string() + ".csv", base.string() + ".pgm");
    }
  }
  ojson out;
  out["videos"] = std::move(videos);
  write_json(a.out, out);
  return kOk;
}

// ---------------------------------------------------------------- denoise

struct DenoiseArgs {
  std::string ckpt;
  std::string corpus;
  std::string out;
  double alpha = 0.5;
};

void add_denoise(CLI::App& app, DenoiseArgs& a) {
  app.add_option("--ckpt", a.ckpt, "Checkpoint; its EMA teacher is used when present");
  app.add_option("--corpus", a.corpus, "Corpus (JSON Lines)");
  app.add_option("--out", a.out, "Pseudo-label output (JSON)");
  app.add_option("--alpha", a.alpha, "Fraction labelled alignable, pooled over the corpus")->capture_default_str();
}

int run_denoise(const DenoiseArgs& a) {
  require(a.ckpt, "--ckpt");
  require(a.corpus, "--corpus");
  require(a.out, "--out");
  if (!(a.alpha > 0.0 && a.alpha <= 1.0)) throw UsageError("--alpha must be in (0, 1]");
  const talign::Checkpoint ckpt = talign::load_checkpoint(a.ckpt);
  const talign::ParameterSet& teacher = ckpt.ema ? ckpt.ema->teacher : ckpt.params;
  const talign::Corpus corpus = talign::load_jsonl(fs::path(a.corpus));

  std::vector<talign::Tensor> joint, dual;
  std::vector<std::vector<talign::SentenceMask>> masks;
  for (const auto& v : corpus) {
    const auto inf = talign::infer_video(ckpt.config, teacher, v.features, video_tokens(v));
    joint.push_back(inf.alignment);
    dual.push_back(inf.alignment_dual);
    std::vector<talign::SentenceMask> m;
    for (const auto& s : v.sentences) m.push_back(talign::SentenceMask::from_interval(s.start_sec, s.end_sec, v.duration()));
    masks.push_back(std::move(m));
  }
  std::vector<talign::WindowAgreementInput> inputs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].sentences.empty()) inputs.push_back({&joint[i], &dual[i], masks[i]});
  }
  talign::PseudoLabels labels;
  if (!inputs.empty()) labels = talign::denoise_batch(inputs, a.alpha);

  ojson videos = ojson::array();
  std::size_t w = 0;
  for (const auto& v : corpus) {
    ojson jv;
    jv["id"] = v.id;
    ojson sentences = ojson::array();
    if (!v.sentences.empty()) {
      for (const auto& s : labels.windows[w]) {
        ojson js;
        js["shifted"] = runs_json(s.shifted);
        js["shifted_dual"] = runs_json(s.shifted_dual);
        js["updated"] = runs_json(s.updated);
        js["iou"] = s.iou;
        js["align_score"] = s.align_score;
        js["y_pseudo"] = s.y_pseudo;
        js["active"] = s.active;
        sentences.push_back(std::move(js));
      }
      ++w;
    }
    jv["sentences"] = std::move(sentences);
    videos.push_back(std::move(jv));
  }
  ojson out;
  out["alpha"] = a.alpha;
  out["videos"] = std::move(videos);
  write_json(a.out, out);
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--pred", a.pred, "Predictions: align or segment output (JSON)");
  app.add_option("--gt", a.gt, "Ground truth: sentence annotations or frame labels (JSON), or a corpus (.jsonl)");
  app.add_option("--out", a.out, "Also write the report here");
}

std::map<std::string, Field> index_by_id(const Field& videos) {
  std::map<std::string, Field> out;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const Field v = videos.at(i);
    const std::string id = v.at("id").string();
    if (!out.emplace(id, v).second) throw SchemaError(v.at("id").path(), "duplicate id '" + id + "'");
  }
  return out;
}

ojson eval_alignment(const Field& pred_videos, const Field& gt_videos) {
  const auto preds = index_by_id(pred_videos);
  talign::PointingTally tally;
  std::vector<double> scores;
  std::vector<int> labels;
  bool have_head = true;
  for (std::size_t i = 0; i < gt_videos.size(); ++i) {
    const Field gv = gt_videos.at(i);
    const std::string id = gv.at("id").string();
    auto it = preds.find(id);
    if (it == preds.end()) throw SchemaError(gv.at("id").path(), "no prediction for video '" + id + "'");
    const Field pv = it->second;
    const talign::Tensor A = matrix_from(pv.at("alignment"));
    const Field sents = gv.at("sentences");
    if (sents.size() != A.rows()) {
      throw SchemaError(pv.at("alignment").path(), "has " + std::to_string(A.rows()) + " rows but ground truth has " +
                                                       std::to_string(sents.size()) + " sentences");
    }
    std::vector<talign::GtSentence> gt;
    for (std::size_t k = 0; k < sents.size(); ++k) {
      const Field s = sents.at(k);
      talign::GtSentence g;
      g.alignable = s.at("alignable").boolean();
      if (g.alignable) {
        g.gt_start = s.at("gt_start").number();
        g.gt_end = s.at("gt_end").number();
        if (!(g.gt_start < g.gt_end) || g.gt_start < 0.0 || g.gt_end > static_cast<double>(A.cols())) {
          throw SchemaError(s.path(), "gt interval must satisfy 0 <= gt_start < gt_end <= duration");
        }
      }
      gt.push_back(g);
      labels.push_back(g.alignable ? 1 : 0);
    }
    tally += talign::pointing_game(A, gt);
    std::vector<double> s;
    if (have_head && pv.has("p_alignable")) {
      s = pv.at("p_alignable").numbers();
      if (s.size() != A.rows()) throw SchemaError(pv.at("p_alignable").path(), "length must match alignment rows");
    } else {
      have_head = false;
    }
    if (!have_head) s = talign::alignability_scores_fallback(A);
    scores.insert(scores.end(), s.begin(), s.end());
  }
  if (!have_head) {
    // Scores must come from one source across the whole file.
    scores.clear();
    for (std::size_t i = 0; i < gt_videos.size(); ++i) {
      const auto fb =
          talign::alignability_scores_fallback(matrix_from(preds.at(gt_videos.at(i).at("id").string()).at("alignment")));
      scores.insert(scores.end(), fb.begin(), fb.end());
    }
  }
  ojson r;
  r["R@1"] = tally.total ? ojson(tally.recall()) : ojson(nullptr);
  const bool both = tally.total > 0 && tally.total < labels.size();
  r["ROC-AUC"] = both ? ojson(talign::roc_auc(scores, labels)) : ojson(nullptr);
  r["alignable"] = tally.total;
  r["sentences"] = labels.size();
  r["auc_source"] = have_head ? "head" : "max_over_time";
  return r;
}

std::vector<long> labels_from(const Field& f) {
  std::vector<long> out(f.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f.at(i).integer();
    if (out[i] < -1) throw SchemaError(f.at(i).path(), "labels are action indices or -1 for background");
  }
  return out;
}

ojson eval_segmentation(const Field& pred_videos, const Field& gt_videos) {
  const auto preds = index_by_id(pred_videos);
  double f_acc = 0.0, iou = 0.0, iod = 0.0;
  const std::size_t n = gt_videos.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Field gv = gt_videos.at(i);
    const std::string id = gv.at("id").string();
    auto it = preds.find(id);
    if (it == preds.end()) throw SchemaError(gv.at("id").path(), "no prediction for video '" + id + "'");
    const std::vector<long> truth = labels_from(gv.at("frame_labels"));
    const std::vector<long> pred = labels_from(it->second.at("frame_labels"));
    if (pred.size() != truth.size()) {
      throw SchemaError(it->second.at("frame_labels").path(), "length must match the ground truth");
    }
    const auto [b, e] = talign::trim_background(truth, -1);
    if (b == e) throw SchemaError(gv.at("frame_labels").path(), "no foreground frames");
    // Background inside the span is one extra class after the largest action.
    long top = 0;
    for (std::size_t f = b; f < e; ++f) top = std::max({top, pred[f], truth[f]});
    const auto label = [&](long v) { return static_cast<std::size_t>(v < 0 ? top + 1 : v); };
    std::vector<std::size_t> p, t;
    for (std::size_t f = b; f < e; ++f) {
      p.push_back(label(pred[f]));
      t.push_back(label(truth[f]));
    }
    const auto m = talign::seg_metrics(p, t);
    f_acc += m.f_acc;
    iou += m.iou;
    iod += m.iod;
  }
  ojson r;
  const double d = n ? static_cast<double>(n) : 1.0;
  r["F-Acc"] = f_acc / d;
  r["IoU"] = iou / d;
  r["IoD"] = iod / d;
  r["videos"] = n;
  return r;
}

// Hidden annotations of a corpus file in the sentence ground-truth layout.
nlohmann::json gt_from_corpus(const fs::path& path) {
  const talign::Corpus corpus = talign::load_jsonl(path);
  nlohmann::json videos = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    nlohmann::json sents = nlohmann::json::array();
    for (std::size_t k = 0; k < corpus[i].sentences.size(); ++k) {
      const auto& gt = corpus[i].sentences[k].gt;
      if (!gt) {
        throw SchemaError("gt[" + std::to_string(i) + "].sentences[" + std::to_string(k) + "]",
                          "corpus sentence has no hidden annotation");
      }
      nlohmann::json s{{"alignable", gt->alignable}};
      if (gt->alignable) {
        s["gt_start"] = gt->gt_start;
        s["gt_end"] = gt->gt_end;
      }
      sents.push_back(std::move(s));
    }
    videos.push_back({{"id", corpus[i].id}, {"sentences", std::move(sents)}});
  }
  return {{"videos", std::move(videos)}};
}

int run_eval(const EvalArgs& a) {
  require(a.pred, "--pred");
  require(a.gt, "--gt");
  const nlohmann::json pred = parse_json_file(a.pred);
  const nlohmann::json gt = fs::path(a.gt).extension() == ".jsonl" ? gt_from_corpus(a.gt) : parse_json_file(a.gt);
  const Field pv = video_list(pred, "pred");
  const Field gv = video_list(gt, "gt");
  if (gv.size() == 0) throw SchemaError(gv.path(), "ground truth lists no videos");
  ojson report;
  if (gv.at(0).has("frame_labels")) {
    report = eval_segmentation(pv, gv);
  } else {
    report = eval_alignment(pv, gv);
  }
  std::cout << report.dump() << "\n";
  if (!a.out.empty()) write_json(a.out, report);
  return kOk;
}

// ---------------------------------------------------------------- retrieve

struct RetrieveArgs {
  std::string ckpt;
  std::string corpus;
  std::string out;
};

void add_retrieve(CLI::App& app, RetrieveArgs& a) {
  app.add_option("--ckpt", a.ckpt, "Model checkpoint");
  app.add_option("--corpus", a.corpus, "Corpus with ground-truth intervals (JSON Lines)");
  app.add_option("--out", a.out, "Also write the report here");
}

// Sentence-to-segment retrieval: every alignable sentence queries the pool of
// all ground-truth segments, each pooled from the dual encoder's video output.
int run_retrieve(const RetrieveArgs& a) {
  require(a.ckpt, "--ckpt");
  require(a.corpus, "--corpus");
  const talign::Checkpoint ckpt = talign::load_checkpoint(a.ckpt);
  const talign::Corpus corpus = talign::load_jsonl(fs::path(a.corpus));
  std::vector<talign::Tensor> queries, segments;
  for (const auto& v : corpus) {
    std::vector<std::vector<std::size_t>> tokens;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& s : v.sentences) {
      if (!s.gt || !s.gt->alignable) continue;
      const auto m = talign::SentenceMask::from_interval(s.gt->gt_start, s.gt->gt_end, v.duration());
      if (!m.any()) continue;
      tokens.push_back(s.token_ids);
      spans.emplace_back(m.first(), m.last());
    }
    if (tokens.empty()) continue;
    const auto inf = talign::infer_video(ckpt.config, ckpt.params, v.features, tokens);
    talign::Tape tape(false);
    const talign::Tensor text = talign::embed_text(tape, ckpt.config, ckpt.params, tokens).value();
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      talign::Tensor q(1, text.cols());
      std::copy_n(text.row(k).begin(), text.cols(), q.row(0).begin());
      queries.push_back(std::move(q));
      segments.push_back(talign::segment_pool(inf.video_dual, spans[k].first, spans[k].second));
    }
  }
  if (queries.empty()) throw SchemaError("corpus", "no alignable sentences with ground truth");
  const std::size_t d = queries.front().cols();
  talign::Tensor Q(queries.size(), d), S(segments.size(), d);
  std::vector<std::size_t> gt(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::copy_n(queries[i].row(0).begin(), d, Q.row(i).begin());
    std::copy_n(segments[i].row(0).begin(), d, S.row(i).begin());
    gt[i] = i;
  }
  const auto m = talign::retrieval_metrics(Q, S, gt);
  ojson r;
  r["R@1"] = m.r_at_1;
  r["R@5"] = m.r_at_5;
  r["R@10"] = m.r_at_10;
  r["MedianRank"] = m.median_rank;
  r["queries"] = queries.size();
  std::cout << r.dump() << "\n";
  if (!a.out.empty()) write_json(a.out, r);
  return kOk;
}

// ---------------------------------------------------------------- segment

struct SegmentArgs {
  std::string align;
  std::string actions;
  std::string out;
};

void add_segment(CLI::App& app, SegmentArgs& a) {
  app.add_option("--align", a.align, "Alignment matrices (align output)");
  app.add_option("--actions", a.actions,
                 "Ordered action lists (JSON): [{id, actions: [row...], begin?, end?}]; frames outside "
                 "[begin, end) are background");
  app.add_option("--out", a.out, "Segmentation output (JSON)");
}

int run_segment(const SegmentArgs& a) {
  require(a.align, "--align");
  require(a.actions, "--actions");
  require(a.out, "--out");
  const nlohmann::json align = parse_json_file(a.align);
  const nlohmann::json actions = parse_json_file(a.actions);
  const auto matrices = index_by_id(video_list(align, "align"));
  const Field lists = video_list(actions, "actions");
  ojson videos = ojson::array();
  for (std::size_t i = 0; i < lists.size(); ++i) {
    const Field item = lists.at(i);
    const std::string id = item.at("id").string();
    auto it = matrices.find(id);
    if (it == matrices.end()) throw SchemaError(item.at("id").path(), "no alignment for video '" + id + "'");
    const talign::Tensor A = matrix_from(it->second.at("alignment"));
    const Field acts = item.at("actions");
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < acts.size(); ++k) {
      rows.push_back(acts.at(k).index());
      if (rows.back() >= A.rows()) throw SchemaError(acts.at(k).path(), "row index out of range");
    }
    if (rows.empty()) throw SchemaError(acts.path(), "needs at least one action");
    const std::size_t T = A.cols();
    const std::size_t begin = item.has("begin") ? item.at("begin").index() : 0;
    const std::size_t end = item.has("end") ? item.at("end").index() : T;
    if (!(begin < end && end <= T)) throw SchemaError(item.path(), "needs 0 <= begin < end <= duration");
    if (end - begin < rows.size()) {
      throw SchemaError(item.path(), "span is shorter than the action list");
    }
    talign::Tensor sub(rows.size(), end - begin);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (std::size_t t = begin; t < end; ++t) sub(k, t - begin) = A(rows[k], t);
    }
    const auto seg = talign::dtw_decode(sub);
    std::vector<long> labels(T, -1);
    for (std::size_t t = begin; t < end; ++t) labels[t] = static_cast<long>(rows[seg.frame_labels[t - begin]]);
    ojson intervals = ojson::array();
    for (const auto& iv : seg.intervals) {
      intervals.push_back({{"action", rows[iv.action]}, {"begin", iv.begin + begin}, {"end", iv.end + begin}});
    }
    ojson jv;
    jv["id"] = id;
    jv["frame_labels"] = labels;
    jv["intervals"] = std::move(intervals);
    jv["cost"] = seg.cost;
    videos.push_back(std::move(jv));
  }
  ojson out;
  out["videos"] = std::move(videos);
  write_json(a.out, out);
  return kOk;
}

// ---------------------------------------------------------------- curate

struct CurateArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::string report;
  std::uint64_t seed = 0;
  std::size_t samples = 5;
  double threshold = talign::kEnglishThreshold;
};

void add_curate(CLI::App& app, CurateArgs& a) {
  app.add_option("--in", a.inputs, "WebVTT files; the file stem becomes the video id");
  app.add_option("--out", a.out, "Sentence records (JSON Lines, one video per line)");
  app.add_option("--report", a.report, "Curation report (JSON); printed in full when omitted");
  app.add_option("--seed", a.seed, "Seed for the language-filter sampling")->capture_default_str();
  app.add_option("--samples", a.samples, "Cues sampled by the language filter")->capture_default_str();
  app.add_option("--threshold", a.threshold, "Minimum mean English probability")->capture_default_str();
}

int run_curate(const CurateArgs& a) {
  if (a.inputs.empty()) throw UsageError("--in is required");
  require(a.out, "--out");
  const auto& clf = talign::TrigramClassifier::bundled();
  talign::RulePunctuator punct;
  talign::Vocabulary vocab;
  std::mt19937_64 rng(a.seed);
  std::string lines;
  ojson files = ojson::array();
  std::size_t kept = 0, deduped = 0, sentences = 0;
  for (const auto& in : a.inputs) {
    const std::string id = fs::path(in).stem().string();
    talign::SubtitleDoc doc;
    try {
      doc = talign::parse_vtt(talign::read_file(in), id);
    } catch (const talign::ParseError& e) {
      throw talign::ParseError(in + ": " + e.what(), e.location());
    } catch (const talign::ValidationError& e) {
      throw talign::ValidationError(in + ": " + e.what());
    }
    const auto lf = talign::language_filter(doc, clf, rng, a.samples, a.threshold);
    talign::CurationReport rep;
    rep.kept = lf.kept;
    rep.avg_english_prob = lf.avg_english_prob;
    std::vector<talign::SentenceRecord> recs;
    if (lf.kept) {
      std::size_t changed = 0;
      const auto clean = talign::dedup_linebreaks(doc, &changed);
      rep.cues_deduped = changed;
      recs = talign::restitch_sentences(clean, punct, vocab);
      rep.sentences_out = recs.size();
      ojson jv;
      jv["id"] = id;
      ojson js = ojson::array();
      for (const auto& s : recs) {
        js.push_back({{"text", s.text}, {"tokens", s.token_ids}, {"start", s.start_sec}, {"end", s.end_sec}});
      }
      jv["sentences"] = std::move(js);
      lines += jv.dump() + "\n";
    }
    kept += rep.kept ? 1 : 0;
    deduped += rep.cues_deduped;
    sentences += rep.sentences_out;
    files.push_back({{"id", id},
                     {"kept", rep.kept},
                     {"avg_english_prob", rep.avg_english_prob},
                     {"cues_deduped", rep.cues_deduped},
                     {"sentences_out", rep.sentences_out}});
  }
  talign::write_file_atomic(a.out, lines);
  ojson report;
  report["files"] = std::move(files);
  report["totals"] = {{"files", a.inputs.size()},
                      {"kept", kept},
                      {"discarded", a.inputs.size() - kept},
                      {"cues_deduped", deduped},
                      {"sentences_out", sentences}};
  report["vocab_size"] = vocab.size();
  if (a.report.empty()) {
    std::cout << report.dump() << "\n";
  } else {
    write_json(a.report, report);
    std::cout << report["totals"].dump() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal alignment of narrated video: training, denoising, inference and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "talign 0.1.0");

  SynthArgs synth;
  TrainArgs train;
  AlignArgs align;
  DenoiseArgs denoise;
  EvalArgs eval;
  RetrieveArgs retrieve;
  SegmentArgs segment;
  CurateArgs curate;

  struct Command {
    CLI::App* app;
    std::string config;
  };
  std::vector<Command> commands;
  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    commands.push_back({sub, {}});
    return sub;
  };
  add_synth(*add("synth", "Generate a synthetic noisy-narration corpus"), synth);
  add_train(*add("train", "Run stage 1, stage 2 or both"), train);
  add_align(*add("align", "Alignment matrices and alignability for every video"), align);
  add_denoise(*add("denoise", "Pseudo-labels from the teacher's mutual agreement"), denoise);
  add_eval(*add("eval", "R@1 and ROC-AUC, or F-Acc, IoU and IoD for frame labels"), eval);
  add_retrieve(*add("retrieve", "Sentence-to-segment retrieval R@1/5/10 and median rank"), retrieve);
  add_segment(*add("segment", "DTW decoding of ordered action lists"), segment);
  add_curate(*add("curate", "Language filter, linebreak dedup and sentence restitching of WebVTT files"), curate);
  for (auto& c : commands) c.app->add_option("--config", c.config, "JSON file of option values; flags win");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (auto& c : commands) {
      if (c.app->parsed() && !c.config.empty()) apply_config(c.app, c.config);
    }
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "synth") return run_synth(synth);
    if (name == "train") return run_train(train);
    if (name == "align") return run_align(align);
    if (name == "denoise") return run_denoise(denoise);
    if (name == "eval") return run_eval(eval);
    if (name == "retrieve") return run_retrieve(retrieve);
    if (name == "segment") return run_segment(segment);
    return run_curate(curate);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const talign::ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const talign::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kData;
  } catch (const talign::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
}
