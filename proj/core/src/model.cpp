#include "talign/model.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "talign/error.hpp"
#include "talign/eval.hpp"

namespace talign {

using nlohmann::json;

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || max_T == 0 || c_raw == 0 || text_dim == 0) {
    throw ContractError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ContractError("d_model must be divisible by n_heads");
  if (vocab_size == 0) throw ContractError("vocab_size must be positive");
}

std::string ModelConfig::to_json() const {
  json j{{"n_layers", n_layers}, {"n_heads", n_heads},       {"d_model", d_model},
         {"d_ff", d_ff},          {"max_T", max_T},           {"c_raw", c_raw},
         {"text_dim", text_dim}, {"vocab_size", vocab_size}, {"segment_embedding", segment_embedding}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_T = j.at("max_T").get<std::size_t>();
    c.c_raw = j.at("c_raw").get<std::size_t>();
    c.text_dim = j.at("text_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.segment_embedding = j.at("segment_embedding").get<bool>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what(), 0);
  }
}

namespace {

void add_linear(ParameterSet& p, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w(in, out);
  for (double& x : w.data()) x = u(rng);
  p.add(name + ".w", std::move(w));
  p.add(name + ".b", Tensor(1, out));
}

void add_norm(ParameterSet& p, const std::string& name, std::size_t d) {
  p.add(name + ".g", Tensor(1, d, 1.0));
  p.add(name + ".b", Tensor(1, d));
}

void add_encoder(ParameterSet& p, std::mt19937_64& rng, const ModelConfig& cfg, const std::string& prefix) {
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string b = prefix + ".L" + std::to_string(l);
    add_norm(p, b + ".ln1", d);
    add_linear(p, rng, b + ".attn.q", d, d);
    add_linear(p, rng, b + ".attn.k", d, d);
    add_linear(p, rng, b + ".attn.v", d, d);
    add_linear(p, rng, b + ".attn.o", d, d);
    add_norm(p, b + ".ln2", d);
    add_linear(p, rng, b + ".ff1", d, cfg.ff_dim());
    add_linear(p, rng, b + ".ff2", cfg.ff_dim(), d);
  }
  add_norm(p, prefix + ".ln_f", d);
}

Var linear(Tape& tape, const ParameterSet& p, const std::string& name, Var x) {
  return ad::add_row(ad::matmul(x, tape.parameter(p, name + ".w")), tape.parameter(p, name + ".b"));
}

Var norm(Tape& tape, const ParameterSet& p, const std::string& name, Var x) {
  return ad::add_row(ad::mul_row(ad::layer_norm(x), tape.parameter(p, name + ".g")), tape.parameter(p, name + ".b"));
}

Var attention(Tape& tape, const ModelConfig& cfg, const ParameterSet& p, const std::string& name, Var x) {
  const Var q = linear(tape, p, name + ".q", x);
  const Var k = linear(tape, p, name + ".k", x);
  const Var v = linear(tape, p, name + ".v", x);
  const std::size_t dh = cfg.d_model / cfg.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t a = h * dh, b = a + dh;
    const Var scores = ad::scale(ad::matmul_nt(ad::slice_cols(q, a, b), ad::slice_cols(k, a, b)), inv_sqrt);
    heads.push_back(ad::matmul(ad::row_softmax(scores), ad::slice_cols(v, a, b)));
  }
  const Var merged = cfg.n_heads == 1 ? heads[0] : ad::concat_cols(heads);
  return linear(tape, p, name + ".o", merged);
}

// Pre-norm blocks followed by a final norm.
Var encoder(Tape& tape, const ModelConfig& cfg, const ParameterSet& p, const std::string& prefix, Var x) {
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string b = prefix + ".L" + std::to_string(l);
    x = ad::add(x, attention(tape, cfg, p, b + ".attn", norm(tape, p, b + ".ln1", x)));
    const Var h = ad::gelu(linear(tape, p, b + ".ff1", norm(tape, p, b + ".ln2", x)));
    x = ad::add(x, linear(tape, p, b + ".ff2", h));
  }
  return norm(tape, p, prefix + ".ln_f", x);
}

Var add_temporal_embedding(Tape& tape, const ModelConfig& cfg, const ParameterSet& p, Var v) {
  if (v.rows() > cfg.max_T) {
    throw ContractError("window too long: " + std::to_string(v.rows()) + " > max_T " + std::to_string(cfg.max_T));
  }
  return ad::add(v, ad::slice_rows(tape.parameter(p, "te"), 0, v.rows()));
}

}  // namespace

ParameterSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  Tensor emb(cfg.vocab_size, cfg.text_dim);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (double& x : emb.data()) x = unit(rng);
  p.add("text.embed", std::move(emb));
  add_linear(p, rng, "text.fc1", cfg.text_dim, cfg.d_model);
  add_linear(p, rng, "text.fc2", cfg.d_model, cfg.d_model);
  add_linear(p, rng, "visual.proj", cfg.c_raw, cfg.d_model);
  Tensor te(cfg.max_T, cfg.d_model);
  std::normal_distribution<double> small(0.0, 0.02);
  for (double& x : te.data()) x = small(rng);
  p.add("te", std::move(te));
  add_encoder(p, rng, cfg, "mt");
  add_encoder(p, rng, cfg, "dual");
  add_linear(p, rng, "head", cfg.d_model, 2);
  if (cfg.segment_embedding) {
    Tensor seg(2, cfg.d_model);
    for (double& x : seg.data()) x = small(rng);
    p.add("segment", std::move(seg));
  }
  return p;
}

Var embed_text(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, TokenLists tokens) {
  if (tokens.empty()) throw ContractError("embed_text needs at least one sentence");
  std::vector<std::size_t> flat;
  for (const auto& sent : tokens) {
    if (sent.empty() || sent.size() > 32) throw ContractError("sentence must have 1..32 tokens");
    for (std::size_t id : sent) {
      if (id >= cfg.vocab_size) throw ContractError("token id " + std::to_string(id) + " out of vocabulary");
    }
    flat.insert(flat.end(), sent.begin(), sent.end());
  }
  const Var words = ad::gather_rows(tape.parameter(params, "text.embed"), flat);
  const Var h = ad::gelu(linear(tape, params, "text.fc1", words));
  const Var out = linear(tape, params, "text.fc2", h);
  std::vector<Var> pooled;
  pooled.reserve(tokens.size());
  std::size_t offset = 0;
  for (const auto& sent : tokens) {
    pooled.push_back(ad::max_over(ad::slice_rows(out, offset, offset + sent.size()), Axis::rows));
    offset += sent.size();
  }
  return pooled.size() == 1 ? pooled[0] : ad::concat_rows(pooled);
}

Var embed_visual(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, const Tensor& features) {
  if (features.rows() > cfg.max_T) {
    throw ContractError("window too long: " + std::to_string(features.rows()) + " > max_T " +
                        std::to_string(cfg.max_T));
  }
  if (features.cols() != cfg.c_raw) throw ShapeError("feature width does not match c_raw");
  return linear(tape, params, "visual.proj", tape.constant(features));
}

JointOutput multimodal_forward(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, Var v, Var s) {
  Var video = add_temporal_embedding(tape, cfg, params, v);
  const std::size_t T = v.rows();
  if (!s.valid() || s.rows() == 0) {
    if (cfg.segment_embedding) video = ad::add_row(video, ad::slice_rows(tape.parameter(params, "segment"), 0, 1));
    return {encoder(tape, cfg, params, "mt", video), Var()};
  }
  if (s.cols() != v.cols()) throw ShapeError("text and video widths differ");
  Var text = s;
  if (cfg.segment_embedding) {
    const Var seg = tape.parameter(params, "segment");
    video = ad::add_row(video, ad::slice_rows(seg, 0, 1));
    text = ad::add_row(text, ad::slice_rows(seg, 1, 2));
  }
  const Var parts[] = {video, text};
  const Var out = encoder(tape, cfg, params, "mt", ad::concat_rows(parts));
  return {ad::slice_rows(out, 0, T), ad::slice_rows(out, T, T + s.rows())};
}

Var dual_forward(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, Var v) {
  return encoder(tape, cfg, params, "dual", add_temporal_embedding(tape, cfg, params, v));
}

Var similarity(Var a, Var b) {
  if (a.cols() != b.cols()) throw ShapeError("similarity: width mismatch");
  return ad::matmul_nt(ad::row_normalize(a), ad::row_normalize(b));
}

Var alignability_head(Tape& tape, const ParameterSet& params, Var sentences) {
  return linear(tape, params, "head", sentences);
}

ForwardOutput forward(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, const Tensor& features,
                      TokenLists tokens, bool with_head) {
  ForwardOutput out;
  const Var v = embed_visual(tape, cfg, params, features);
  out.text = embed_text(tape, cfg, params, tokens);
  const JointOutput joint = multimodal_forward(tape, cfg, params, v, out.text);
  out.video_dual = dual_forward(tape, cfg, params, v);
  out.alignment = similarity(joint.sentences, joint.video);
  out.alignment_dual = similarity(out.text, out.video_dual);
  if (with_head) out.logits = alignability_head(tape, params, joint.sentences);
  return out;
}

VideoInference infer_video(const ModelConfig& cfg, const ParameterSet& params, const Tensor& features,
                           TokenLists tokens) {
  const std::size_t T = features.rows();
  const std::size_t K = tokens.size();
  std::vector<WindowMatrix> joint, dual;
  VideoInference res;
  res.video_dual = Tensor(T, cfg.d_model);
  res.p_alignable.assign(K, 0.0);
  const auto windows = tile_windows(T, cfg.max_T);
  for (const auto& [start, len] : windows) {
    Tensor w(len, features.cols());
    for (std::size_t t = 0; t < len; ++t) {
      std::copy(features.row(start + t).begin(), features.row(start + t).end(), w.row(t).begin());
    }
    Tape tape(false);
    const ForwardOutput f = forward(tape, cfg, params, w, tokens);
    joint.push_back({start, f.alignment.value()});
    dual.push_back({start, f.alignment_dual.value()});
    const Tensor& vd = f.video_dual.value();
    for (std::size_t t = 0; t < len; ++t) std::copy(vd.row(t).begin(), vd.row(t).end(), res.video_dual.row(start + t).begin());
    const Tensor& lg = f.logits.value();
    for (std::size_t k = 0; k < K; ++k) {
      const double m = std::max(lg(k, 0), lg(k, 1));
      const double e0 = std::exp(lg(k, 0) - m), e1 = std::exp(lg(k, 1) - m);
      res.p_alignable[k] += e1 / (e0 + e1) / static_cast<double>(windows.size());
    }
  }
  res.alignment = stitch_windows(joint, T);
  res.alignment_dual = stitch_windows(dual, T);
  return res;
}

}  // namespace talign
