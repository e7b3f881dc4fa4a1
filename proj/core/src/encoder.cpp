#include "kgr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace kgr {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

Mat normal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, kInitStd);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h) {
  h = fnv1a(t.name.data(), t.name.size(), h);
  const std::int64_t dims[2] = {t.value.rows(), t.value.cols()};
  h = fnv1a(dims, sizeof(dims), h);
  return fnv1a(t.value.data(), static_cast<std::size_t>(t.value.size()) * sizeof(double), h);
}

bool is_adapter_tensor(const std::string& name) { return name.rfind("adapter.", 0) == 0; }

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("model config: ") + what + " must be >= 1");
  };
  if (layers < 0) throw std::invalid_argument("model config: layers must be >= 0");
  positive(d, "d");
  positive(heads, "heads");
  positive(d_ff, "d_ff");
  positive(max_len, "max_len");
  positive(vocab_size, "vocab_size");
  positive(adapter_width, "adapter_width");
  if (d % heads != 0) throw std::invalid_argument("model config: d must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model config: dropout must be in [0, 1)");
}

std::size_t ModelParameters::add(std::string name, Mat value) {
  auto idx = tensors_.size();
  if (!names_.emplace(name, idx).second) throw std::logic_error("duplicate tensor " + name);
  tensors_.push_back(Tensor{std::move(name), std::move(value), true});
  return idx;
}

std::size_t ModelParameters::index(const std::string& name) const {
  auto it = names_.find(name);
  if (it == names_.end()) throw std::out_of_range("no tensor named " + name);
  return it->second;
}

ModelParameters ModelParameters::init(const ModelConfig& cfg) {
  cfg.validate();
  ModelParameters p;
  p.config_ = cfg;
  Rng rng(cfg.seed);
  const Eigen::Index d = cfg.d, ff = cfg.d_ff;

  p.embedding_ = p.add("embedding", normal_init(cfg.vocab_size, d, rng));
  p.positions_ = p.add("position", normal_init(cfg.max_len, d, rng));
  if (cfg.separate_graph_positions) p.graph_positions_ = p.add("graph_position", normal_init(cfg.max_len, d, rng));

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Layer L{};
    L.wq = p.add(pre + "attn.wq", normal_init(d, d, rng));
    L.bq = p.add(pre + "attn.bq", Mat::Zero(1, d));
    L.wk = p.add(pre + "attn.wk", normal_init(d, d, rng));
    L.bk = p.add(pre + "attn.bk", Mat::Zero(1, d));
    L.wv = p.add(pre + "attn.wv", normal_init(d, d, rng));
    L.bv = p.add(pre + "attn.bv", Mat::Zero(1, d));
    L.wo = p.add(pre + "attn.wo", normal_init(d, d, rng));
    L.bo = p.add(pre + "attn.bo", Mat::Zero(1, d));
    L.ln1_g = p.add(pre + "ln1.gamma", Mat::Ones(1, d));
    L.ln1_b = p.add(pre + "ln1.beta", Mat::Zero(1, d));
    L.w1 = p.add(pre + "ffn.w1", normal_init(d, ff, rng));
    L.b1 = p.add(pre + "ffn.b1", Mat::Zero(1, ff));
    L.w2 = p.add(pre + "ffn.w2", normal_init(ff, d, rng));
    L.b2 = p.add(pre + "ffn.b2", Mat::Zero(1, d));
    L.ln2_g = p.add(pre + "ln2.gamma", Mat::Ones(1, d));
    L.ln2_b = p.add(pre + "ln2.beta", Mat::Zero(1, d));
    p.layers_.push_back(L);
  }
  p.head_w_ = p.add("head.w", normal_init(d, 1, rng));
  p.head_b_ = p.add("head.b", Mat::Zero(1, 1));
  return p;
}

void ModelParameters::add_adapter_set(const std::string& name) {
  if (name.empty() || name.find('.') != std::string::npos)
    throw std::invalid_argument("adapter set name must be non-empty and contain no '.'");
  if (has_adapter_set(name)) throw std::logic_error("adapter set '" + name + "' already exists");
  std::uint64_t seed = fnv1a(name.data(), name.size(), config_.seed);
  Rng rng(seed);
  const Eigen::Index d = config_.d, b = config_.adapter_width;
  AdapterSet set;
  for (int l = 0; l < config_.layers; ++l) {
    for (const char* where : {"attn", "ffn"}) {
      const std::string pre = "adapter." + name + ".layer" + std::to_string(l) + "." + where + ".";
      Adapter a{};
      a.down = add(pre + "down", normal_init(d, b, rng));
      a.down_b = add(pre + "down_b", Mat::Zero(1, b));
      a.up = add(pre + "up", Mat::Zero(b, d));
      a.up_b = add(pre + "up_b", Mat::Zero(1, d));
      (std::string(where) == "attn" ? set.attn : set.ffn).push_back(a);
    }
  }
  set.head_w = add("adapter." + name + ".head.w", tensors_[head_w_].value);
  set.head_b = add("adapter." + name + ".head.b", tensors_[head_b_].value);
  adapters_.emplace(name, std::move(set));
}

std::vector<std::string> ModelParameters::adapter_sets() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : adapters_) out.push_back(name);
  return out;
}

const ModelParameters::AdapterSet& ModelParameters::adapter_set(const std::string& name) const {
  auto it = adapters_.find(name);
  if (it == adapters_.end()) throw std::out_of_range("no adapter set '" + name + "'");
  return it->second;
}

void ModelParameters::activate(std::optional<std::string> name) {
  if (name && !has_adapter_set(*name)) throw std::out_of_range("no adapter set '" + *name + "'");
  active_ = std::move(name);
}

const ModelParameters::AdapterSet* ModelParameters::active_set() const {
  return active_ ? &adapters_.at(*active_) : nullptr;
}

std::size_t ModelParameters::head_w() const { return active_ ? adapters_.at(*active_).head_w : head_w_; }
std::size_t ModelParameters::head_b() const { return active_ ? adapters_.at(*active_).head_b : head_b_; }

ParamCounts ModelParameters::set_trainable(TrainPolicy policy) {
  if (policy == TrainPolicy::Full) {
    for (auto& t : tensors_) t.trainable = true;
    return counts();
  }
  if (!active_) throw std::logic_error("adapter-only training requires an active adapter set");
  const std::string prefix = "adapter." + *active_ + ".";
  for (auto& t : tensors_) t.trainable = t.name.rfind(prefix, 0) == 0;
  return counts();
}

ParamCounts ModelParameters::counts() const {
  ParamCounts c;
  for (const auto& t : tensors_) {
    auto n = static_cast<std::size_t>(t.value.size());
    c.total += n;
    if (t.trainable) c.trainable += n;
  }
  return c;
}

std::uint64_t ModelParameters::hash() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& t : tensors_) h = hash_tensor(t, h);
  return h;
}

std::uint64_t ModelParameters::base_hash() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& t : tensors_)
    if (!is_adapter_tensor(t.name)) h = hash_tensor(t, h);
  return h;
}

GradientSet::GradientSet(const ModelParameters& params) {
  grads_.resize(params.tensors().size());
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    const auto& t = params.tensors()[i];
    if (t.trainable) grads_[i] = Mat::Zero(t.value.rows(), t.value.cols());
  }
}

Mat& GradientSet::operator[](std::size_t i) {
  if (!has(i)) throw std::out_of_range("no gradient for tensor " + std::to_string(i));
  return *grads_[i];
}

const Mat& GradientSet::operator[](std::size_t i) const {
  if (!has(i)) throw std::out_of_range("no gradient for tensor " + std::to_string(i));
  return *grads_[i];
}

void GradientSet::zero() {
  for (auto& g : grads_)
    if (g) g->setZero();
}

void GradientSet::scale(double s) {
  for (auto& g : grads_)
    if (g) *g *= s;
}

double GradientSet::squared_norm() const {
  double total = 0.0;
  for (const auto& g : grads_)
    if (g) total += g->squaredNorm();
  return total;
}

void GradientSet::add(const GradientSet& other) {
  if (other.grads_.size() != grads_.size()) throw std::invalid_argument("gradient set size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i)
    if (grads_[i] && other.grads_[i]) *grads_[i] += *other.grads_[i];
}

RowVec embed_node(std::span<const TokenId> ids, const Mat& table) {
  RowVec out = RowVec::Zero(table.cols());
  if (ids.empty()) {
    out = table.row(Vocabulary::kUnk);
    return out;
  }
  for (auto id : ids) {
    if (id < 0 || id >= table.rows()) throw std::out_of_range("token id " + std::to_string(id) + " outside embedding table");
    out += table.row(id);
  }
  return out;
}

namespace {

struct RowSource {
  std::size_t table;
  Eigen::Index row;
};

RowSource position_source(const InputSequence& in, std::size_t r, const ModelParameters& p) {
  auto seg = in.row_segments[r];
  Eigen::Index pos = in.row_positions[r];
  if (seg == Segment::Graph && p.graph_positions()) {
    return {*p.graph_positions(), pos - static_cast<Eigen::Index>(in.question_length())};
  }
  return {p.positions(), pos};
}

}  // namespace

Mat embed_input(const InputSequence& in, const ModelParameters& params) {
  const auto& emb = params.tensors()[params.embedding()].value;
  const auto l = static_cast<Eigen::Index>(in.length());
  Mat x(l, emb.cols());
  for (Eigen::Index r = 0; r < l; ++r) {
    auto src = position_source(in, static_cast<std::size_t>(r), params);
    const auto& table = params.tensors()[src.table].value;
    if (src.row < 0 || src.row >= table.rows())
      throw std::out_of_range("position " + std::to_string(src.row) + " outside position table");
    x.row(r) = embed_node(in.row_tokens[static_cast<std::size_t>(r)], emb) + table.row(src.row);
  }
  return x;
}

namespace {

// y = x W + b. With split > 0 the first `split` rows are multiplied as their own
// block: GEMM kernels pick different SIMD paths by row count, and question rows
// must come out bit-identical whatever graph follows them.
Mat linear(const Mat& x, const Mat& w, const Mat& b, Eigen::Index split = 0) {
  Mat y(x.rows(), w.cols());
  if (split > 0 && split < x.rows()) {
    y.topRows(split).noalias() = x.topRows(split) * w;
    y.bottomRows(x.rows() - split).noalias() = x.bottomRows(x.rows() - split) * w;
  } else {
    y.noalias() = x * w;
  }
  y.rowwise() += b.row(0);
  return y;
}

void softmax_rows(Mat& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache* cache) {
  const auto n = static_cast<double>(x.cols());
  Mat xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = x.row(i).sum() / n;
    double var = (x.row(i).array() - mean).square().sum() / n;
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
  }
  Mat y = (xhat.array().rowwise() * gamma.row(0).array()).matrix();
  y.rowwise() += beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

// Returns dx; accumulates dgamma/dbeta when non-null.
Mat layer_norm_backward(const Mat& dy, const Mat& gamma, const LayerNormCache& c, Mat* dgamma, Mat* dbeta) {
  if (dgamma) *dgamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (dbeta) *dbeta += dy.colwise().sum();
  const auto n = static_cast<double>(dy.cols());
  Mat dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    double mean_d = dxhat.row(i).sum() / n;
    double mean_dx = dxhat.row(i).dot(c.xhat.row(i)) / n;
    dx.row(i) = (dxhat.row(i).array() - mean_d - c.xhat.row(i).array() * mean_dx) * c.inv_std(i);
  }
  return dx;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

struct AttentionCache {
  Mat x, q, k, v;
  std::vector<Mat> probs;       // softmax output per head
  std::vector<Mat> prob_drop;   // dropout masks per head (empty when off)
  Mat context;
};

void check_attention_shapes(const Mat& x, const AttentionMask& mask, const AttentionWeights& w, int heads) {
  const auto d = x.cols();
  if (mask.values.rows() != x.rows() || mask.values.cols() != x.rows())
    throw std::invalid_argument("masked_attention: mask is not l x l");
  for (const Mat* m : {&w.wq, &w.wk, &w.wv, &w.wo})
    if (m->rows() != d || m->cols() != d) throw std::invalid_argument("masked_attention: projection is not d x d");
  for (const Mat* b : {&w.bq, &w.bk, &w.bv, &w.bo})
    if (b->rows() != 1 || b->cols() != d) throw std::invalid_argument("masked_attention: bias is not 1 x d");
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("masked_attention: d not divisible by heads");
}

// Attention sublayer output before the residual. Probability dropout applies
// when `rng` is non-null and rate > 0.
Mat attention_forward(const Mat& x, const AttentionMask& mask, const AttentionWeights& w, int heads,
                      AttentionCache* cache, double rate, Rng* rng) {
  const auto d = x.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto n = x.rows();
  // question rows that only read question columns are computed on their own block
  auto nq = static_cast<Eigen::Index>(mask.question_length);
  if (nq <= 0 || nq >= n || (mask.values.topRightCorner(nq, n - nq).array() > kNegInf / 2).any()) nq = 0;
  Mat q = linear(x, w.wq, w.bq, nq);
  Mat k = linear(x, w.wk, w.bk, nq);
  Mat v = linear(x, w.wv, w.bv, nq);
  Mat context(n, d);
  std::vector<Mat> probs, drops;
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale + mask.values;
    softmax_rows(s);
    Mat used = s;
    if (rng && rate > 0.0) {
      Mat m = dropout_mask(s.rows(), s.cols(), rate, *rng);
      used = s.cwiseProduct(m);
      drops.push_back(std::move(m));
    }
    if (nq > 0) {
      Mat sq = (q.block(0, h * dh, nq, dh) * k.block(0, h * dh, nq, dh).transpose()) * scale +
               mask.values.topLeftCorner(nq, nq);
      softmax_rows(sq);
      // graph columns of the question block are exactly zero after softmax
      s.topLeftCorner(nq, nq) = sq;
      s.topRightCorner(nq, n - nq).setZero();
      if (rng && rate > 0.0) used.topRows(nq) = s.topRows(nq).cwiseProduct(drops.back().topRows(nq));
      else used.topRows(nq) = s.topRows(nq);
      context.block(0, h * dh, nq, dh).noalias() = used.topLeftCorner(nq, nq) * v.block(0, h * dh, nq, dh);
      context.block(nq, h * dh, n - nq, dh).noalias() = used.bottomRows(n - nq) * v.middleCols(h * dh, dh);
    } else {
      context.middleCols(h * dh, dh).noalias() = used * v.middleCols(h * dh, dh);
    }
    probs.push_back(std::move(s));
  }
  Mat out = linear(context, w.wo, w.bo, nq);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->prob_drop = std::move(drops);
    cache->context = std::move(context);
  }
  return out;
}

AttentionWeights layer_attention(const ModelParameters& p, const ModelParameters::Layer& L) {
  const auto& t = p.tensors();
  return {t[L.wq].value, t[L.bq].value, t[L.wk].value, t[L.bk].value,
          t[L.wv].value, t[L.bv].value, t[L.wo].value, t[L.bo].value};
}

struct AdapterCache {
  Mat input, pre, act;
};

// x + up(gelu(down(x)))
Mat adapter_forward(const Mat& x, const ModelParameters& p, const ModelParameters::Adapter& a, AdapterCache* cache,
                    Eigen::Index split) {
  const auto& t = p.tensors();
  Mat pre = linear(x, t[a.down].value, t[a.down_b].value, split);
  Mat act = pre.unaryExpr([](double v) { return gelu(v); });
  Mat out = x + linear(act, t[a.up].value, t[a.up_b].value, split);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

void accumulate(GradientSet& g, std::size_t idx, const Mat& value) {
  if (g.has(idx)) g[idx] += value;
}

// Returns d input.
Mat adapter_backward(const Mat& dout, const ModelParameters& p, const ModelParameters::Adapter& a,
                     const AdapterCache& c, GradientSet& g) {
  const auto& t = p.tensors();
  accumulate(g, a.up, c.act.transpose() * dout);
  accumulate(g, a.up_b, dout.colwise().sum());
  Mat dact = dout * t[a.up].value.transpose();
  Mat dpre = dact.cwiseProduct(c.pre.unaryExpr([](double v) { return gelu_grad(v); }));
  accumulate(g, a.down, c.input.transpose() * dpre);
  accumulate(g, a.down_b, dpre.colwise().sum());
  return dout + dpre * t[a.down].value.transpose();
}

}  // namespace

Mat masked_attention(const Mat& x, const AttentionMask& mask, const AttentionWeights& w, int heads) {
  check_attention_shapes(x, mask, w, heads);
  return attention_forward(x, mask, w, heads, nullptr, 0.0, nullptr);
}

Mat attention_probabilities(const Mat& x, const AttentionMask& mask, const AttentionWeights& w, int heads, int head) {
  check_attention_shapes(x, mask, w, heads);
  if (head < 0 || head >= heads) throw std::out_of_range("attention_probabilities: head index");
  AttentionCache c;
  attention_forward(x, mask, w, heads, &c, 0.0, nullptr);
  return c.probs[static_cast<std::size_t>(head)];
}

struct EncoderPass::Cache {
  struct Block {
    AttentionCache attn;
    Mat attn_drop;  // hidden dropout mask after the output projection
    AdapterCache attn_adapter;
    LayerNormCache ln1;
    Mat y;  // LN1 output
    Mat ff_pre, ff_act;
    Mat ffn_drop;
    AdapterCache ffn_adapter;
    LayerNormCache ln2;
  };
  InputSequence input_copy;  // rows and positions only; no mask
  std::vector<Block> blocks;
  std::vector<Mat> outputs;
  const ModelParameters::AdapterSet* adapters = nullptr;
};

EncoderPass::EncoderPass(const ModelParameters& params) : params_(&params) {}
EncoderPass::~EncoderPass() = default;
EncoderPass::EncoderPass(EncoderPass&&) noexcept = default;

const Mat& EncoderPass::forward(const InputSequence& in, Mode mode, Rng* rng) {
  const auto& p = *params_;
  const auto& cfg = p.config();
  const double rate = mode == Mode::Train ? cfg.dropout : 0.0;
  if (rate > 0.0 && !rng) throw std::invalid_argument("EncoderPass::forward: dropout requires an rng");
  Rng* drop_rng = rate > 0.0 ? rng : nullptr;
  if (in.mask.size() != in.length()) throw std::invalid_argument("EncoderPass::forward: mask size does not match input");

  auto cache = std::make_unique<Cache>();
  cache->input_copy.question_ids = in.question_ids;
  cache->input_copy.row_tokens = in.row_tokens;
  cache->input_copy.row_positions = in.row_positions;
  cache->input_copy.row_segments = in.row_segments;
  cache->adapters = p.active_set();
  const auto& t = p.tensors();

  Mat x = embed_input(in, p);
  if (!x.allFinite()) throw NonFiniteError("non-finite input embeddings");
  cache->outputs.push_back(x);
  const auto nq = static_cast<Eigen::Index>(in.mask.question_length);

  for (std::size_t li = 0; li < p.layers().size(); ++li) {
    const auto& L = p.layers()[li];
    Cache::Block b;
    Mat a = attention_forward(x, in.mask, layer_attention(p, L), cfg.heads, &b.attn, rate, drop_rng);
    if (drop_rng) {
      b.attn_drop = dropout_mask(a.rows(), a.cols(), rate, *drop_rng);
      a = a.cwiseProduct(b.attn_drop);
    }
    if (cache->adapters) a = adapter_forward(a, p, cache->adapters->attn[li], &b.attn_adapter, nq);
    b.y = layer_norm(x + a, t[L.ln1_g].value, t[L.ln1_b].value, &b.ln1);

    b.ff_pre = linear(b.y, t[L.w1].value, t[L.b1].value, nq);
    b.ff_act = b.ff_pre.unaryExpr([](double v) { return gelu(v); });
    Mat f = linear(b.ff_act, t[L.w2].value, t[L.b2].value, nq);
    if (drop_rng) {
      b.ffn_drop = dropout_mask(f.rows(), f.cols(), rate, *drop_rng);
      f = f.cwiseProduct(b.ffn_drop);
    }
    if (cache->adapters) f = adapter_forward(f, p, cache->adapters->ffn[li], &b.ffn_adapter, nq);
    x = layer_norm(b.y + f, t[L.ln2_g].value, t[L.ln2_b].value, &b.ln2);
    if (!x.allFinite()) throw NonFiniteError("non-finite activations after encoder block " + std::to_string(li));
    cache->blocks.push_back(std::move(b));
    cache->outputs.push_back(x);
  }
  cache_ = std::move(cache);
  return cache_->outputs.back();
}

const Mat& EncoderPass::hidden() const {
  if (!cache_) throw std::logic_error("EncoderPass::hidden called before forward");
  return cache_->outputs.back();
}

const std::vector<Mat>& EncoderPass::layer_outputs() const {
  if (!cache_) throw std::logic_error("EncoderPass::layer_outputs called before forward");
  return cache_->outputs;
}

void EncoderPass::backward(const Mat& d_hidden, GradientSet& g) const {
  if (!cache_) throw std::logic_error("EncoderPass::backward called before forward");
  const auto& p = *params_;
  const auto& cfg = p.config();
  const auto& t = p.tensors();
  const auto& c = *cache_;
  if (d_hidden.rows() != c.outputs.back().rows() || d_hidden.cols() != c.outputs.back().cols())
    throw std::invalid_argument("EncoderPass::backward: gradient shape mismatch");

  Mat dx = d_hidden;
  for (std::size_t li = p.layers().size(); li-- > 0;) {
    const auto& L = p.layers()[li];
    const auto& b = c.blocks[li];

    // LN2 over (y + f)
    Mat ds2 = layer_norm_backward(dx, t[L.ln2_g].value, b.ln2, g.has(L.ln2_g) ? &g[L.ln2_g] : nullptr,
                                  g.has(L.ln2_b) ? &g[L.ln2_b] : nullptr);
    Mat dy = ds2;
    Mat df = ds2;
    if (c.adapters) df = adapter_backward(df, p, c.adapters->ffn[li], b.ffn_adapter, g);
    if (b.ffn_drop.size()) df = df.cwiseProduct(b.ffn_drop);
    accumulate(g, L.w2, b.ff_act.transpose() * df);
    accumulate(g, L.b2, df.colwise().sum());
    Mat dpre = (df * t[L.w2].value.transpose()).cwiseProduct(b.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    accumulate(g, L.w1, b.y.transpose() * dpre);
    accumulate(g, L.b1, dpre.colwise().sum());
    dy += dpre * t[L.w1].value.transpose();

    // LN1 over (x + a)
    Mat ds1 = layer_norm_backward(dy, t[L.ln1_g].value, b.ln1, g.has(L.ln1_g) ? &g[L.ln1_g] : nullptr,
                                  g.has(L.ln1_b) ? &g[L.ln1_b] : nullptr);
    Mat dx_prev = ds1;
    Mat da = ds1;
    if (c.adapters) da = adapter_backward(da, p, c.adapters->attn[li], b.attn_adapter, g);
    if (b.attn_drop.size()) da = da.cwiseProduct(b.attn_drop);

    const auto& ac = b.attn;
    accumulate(g, L.wo, ac.context.transpose() * da);
    accumulate(g, L.bo, da.colwise().sum());
    Mat dcontext = da * t[L.wo].value.transpose();

    const auto d = ac.x.cols();
    const auto dh = d / cfg.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dq(ac.q.rows(), d), dk(ac.k.rows(), d), dv(ac.v.rows(), d);
    for (int h = 0; h < cfg.heads; ++h) {
      const Mat& prob = ac.probs[static_cast<std::size_t>(h)];
      const bool dropped = !ac.prob_drop.empty();
      auto dctx = dcontext.middleCols(h * dh, dh);
      Mat used = dropped ? Mat(prob.cwiseProduct(ac.prob_drop[static_cast<std::size_t>(h)])) : prob;
      dv.middleCols(h * dh, dh) = used.transpose() * dctx;
      Mat dprob = dctx * ac.v.middleCols(h * dh, dh).transpose();
      if (dropped) dprob = dprob.cwiseProduct(ac.prob_drop[static_cast<std::size_t>(h)]);
      Eigen::VectorXd dot = (dprob.array() * prob.array()).rowwise().sum();
      Mat ds = (prob.array() * (dprob.array().colwise() - dot.array())).matrix() * scale;
      dq.middleCols(h * dh, dh) = ds * ac.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * ac.q.middleCols(h * dh, dh);
    }
    accumulate(g, L.wq, ac.x.transpose() * dq);
    accumulate(g, L.bq, dq.colwise().sum());
    accumulate(g, L.wk, ac.x.transpose() * dk);
    accumulate(g, L.bk, dk.colwise().sum());
    accumulate(g, L.wv, ac.x.transpose() * dv);
    accumulate(g, L.bv, dv.colwise().sum());
    dx_prev += dq * t[L.wq].value.transpose() + dk * t[L.wk].value.transpose() + dv * t[L.wv].value.transpose();
    dx = std::move(dx_prev);
  }

  // Embedding and position rows.
  const auto& in = c.input_copy;
  const bool emb_grad = g.has(p.embedding());
  for (std::size_t r = 0; r < in.length(); ++r) {
    auto row = dx.row(static_cast<Eigen::Index>(r));
    if (emb_grad) {
      auto& ge = g[p.embedding()];
      if (in.row_tokens[r].empty())
        ge.row(Vocabulary::kUnk) += row;
      else
        for (auto id : in.row_tokens[r]) ge.row(id) += row;
    }
    auto src = position_source(in, r, p);
    if (g.has(src.table)) g[src.table].row(src.row) += row;
  }
}

}  // namespace kgr
