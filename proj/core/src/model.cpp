#include "ipt/model.hpp"

#include <algorithm>

#include "ipt/ops.hpp"
#include "ipt/rng.hpp"

namespace ipt {

TaskSpec TaskSpec::from_id(const std::string& task_id) {
  DegradationSpec d = spec_for_task(task_id);
  TaskSpec t;
  t.id = task_id;
  t.kind = d.kind;
  t.scale = d.kind == TaskKind::SuperResolution ? d.scale : 1;
  t.sigma = d.sigma;
  return t;
}

void ModelConfig::validate() const {
  if (channels < 1 || patch < 1) throw ConfigError("channels and patch must be positive");
  if (crop % patch != 0) {
    throw ConfigError("crop " + std::to_string(crop) + " not divisible by patch " +
                      std::to_string(patch));
  }
  if (num_heads < 1 || token_dim() % num_heads != 0) {
    throw ConfigError("token dim " + std::to_string(token_dim()) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (head_kind != "resblock" && head_kind != "simple3") {
    throw ConfigError("unknown head kind '" + head_kind + "'");
  }
  if (tasks.empty()) throw ConfigError("model config needs at least one task");
}

ModelConfig desk_config(std::vector<TaskSpec> tasks) {
  ModelConfig c;
  c.channels = 8;
  c.patch = 4;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.num_heads = 4;
  c.tasks = std::move(tasks);
  return c;
}

ModelConfig paper_config(std::vector<TaskSpec> tasks) {
  ModelConfig c;
  c.channels = 64;
  c.patch = 3;  // token dim 576; lands on the published parameter budget
  c.num_encoder_layers = 12;
  c.num_decoder_layers = 12;
  c.num_heads = 8;
  c.tasks = std::move(tasks);
  return c;
}

namespace {

ConvParams init_conv(std::int64_t cout, std::int64_t cin, std::int64_t k, Rng& rng) {
  ConvParams p;
  p.w = randn({cout, cin, k, k}, rng, 0.02);
  p.b = Tensor({cout});
  p.w.requires_grad = p.b.requires_grad = true;
  return p;
}

Tensor init_mat(std::int64_t rows, std::int64_t cols, Rng& rng) {
  Tensor t = randn({rows, cols}, rng, 0.02);
  t.requires_grad = true;
  return t;
}

LayerNormParams init_ln(std::int64_t d) {
  LayerNormParams p;
  p.gamma = Tensor::ones({d});
  p.beta = Tensor({d});
  p.gamma.requires_grad = p.beta.requires_grad = true;
  return p;
}

MhaParams init_mha(std::int64_t d, Rng& rng) {
  return MhaParams{init_mat(d, d, rng), init_mat(d, d, rng), init_mat(d, d, rng),
                   init_mat(d, d, rng)};
}

FfnParams init_ffn(std::int64_t d, std::int64_t hidden, Rng& rng) {
  FfnParams p;
  p.w1 = init_mat(d, hidden, rng);
  p.b1 = Tensor({hidden});
  p.w2 = init_mat(hidden, d, rng);
  p.b2 = Tensor({d});
  p.b1.requires_grad = p.b2.requires_grad = true;
  return p;
}

std::int64_t tail_scale(const TaskSpec& t) { return t.scale; }

}  // namespace

IptModel IptModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  IptModel m;
  m.config = config;
  Rng rng(seed);
  const std::int64_t c = config.channels;
  const std::int64_t d = config.token_dim();
  const std::int64_t hidden = config.hidden_dim();

  for (const TaskSpec& task : config.tasks) {
    HeadParams head;
    if (config.head_kind == "resblock") {
      head.in = init_conv(c, 3, 3, rng);
      head.blocks.resize(2);
      for (auto& blk : head.blocks) {
        blk.conv1 = init_conv(c, c, 5, rng);
        blk.conv2 = init_conv(c, c, 5, rng);
      }
    } else {
      head.simple.push_back(init_conv(c, 3, 3, rng));
      head.simple.push_back(init_conv(c, c, 3, rng));
      head.simple.push_back(init_conv(c, c, 3, rng));
    }
    m.heads.push_back(std::move(head));

    TailParams tail;
    const std::int64_t k = tail_scale(task);
    if (k == 1) {
      tail.convs.push_back(init_conv(3, c, 3, rng));
    } else if (k == 2 || k == 3) {
      tail.convs.push_back(init_conv(3 * k * k, c, 3, rng));
    } else if (k == 4) {
      tail.convs.push_back(init_conv(4 * c, c, 3, rng));
      tail.convs.push_back(init_conv(4 * c, c, 3, rng));
      tail.convs.push_back(init_conv(3, c, 3, rng));
    } else {
      throw ConfigError("unsupported task scale " + std::to_string(k));
    }
    m.tails.push_back(std::move(tail));

    Tensor embed = randn({config.patch * config.patch, c}, rng, 0.02);
    embed.requires_grad = true;
    m.task_embeddings.push_back(std::move(embed));
  }

  m.position_embeddings = randn({config.max_tokens(), d}, rng, 0.02);
  m.position_embeddings.requires_grad = true;

  for (int i = 0; i < config.num_encoder_layers; ++i) {
    EncoderLayerParams layer;
    layer.ln_attn = init_ln(d);
    layer.attn = init_mha(d, rng);
    layer.ln_ffn = init_ln(d);
    layer.ffn = init_ffn(d, hidden, rng);
    m.encoder.push_back(std::move(layer));
  }
  for (int i = 0; i < config.num_decoder_layers; ++i) {
    DecoderLayerParams layer;
    layer.ln_self = init_ln(d);
    layer.self_attn = init_mha(d, rng);
    layer.ln_cross_q = init_ln(d);
    layer.ln_cross_kv = init_ln(d);
    layer.cross_attn = init_mha(d, rng);
    layer.ln_ffn = init_ln(d);
    layer.ffn = init_ffn(d, hidden, rng);
    m.decoder.push_back(std::move(layer));
  }
  return m;
}

std::size_t IptModel::task_index(const std::string& task_id) const {
  for (std::size_t i = 0; i < config.tasks.size(); ++i) {
    if (config.tasks[i].id == task_id) return i;
  }
  throw LookupError("unknown task '" + task_id + "'");
}

const TaskSpec& IptModel::task(const std::string& task_id) const {
  return config.tasks[task_index(task_id)];
}

bool IptModel::has_task(const std::string& task_id) const {
  return std::any_of(config.tasks.begin(), config.tasks.end(),
                     [&](const TaskSpec& t) { return t.id == task_id; });
}

namespace {

template <class Model, class Fn>
void visit_params(Model& m, Fn&& fn) {
  for (std::size_t t = 0; t < m.config.tasks.size(); ++t) {
    const std::string& id = m.config.tasks[t].id;
    auto& head = m.heads[t];
    if (!head.simple.empty()) {
      for (std::size_t i = 0; i < head.simple.size(); ++i) {
        fn("head." + id + ".conv" + std::to_string(i) + ".w", head.simple[i].w);
        fn("head." + id + ".conv" + std::to_string(i) + ".b", head.simple[i].b);
      }
    } else {
      fn("head." + id + ".in.w", head.in.w);
      fn("head." + id + ".in.b", head.in.b);
      for (std::size_t b = 0; b < head.blocks.size(); ++b) {
        const std::string prefix = "head." + id + ".res" + std::to_string(b);
        fn(prefix + ".conv1.w", head.blocks[b].conv1.w);
        fn(prefix + ".conv1.b", head.blocks[b].conv1.b);
        fn(prefix + ".conv2.w", head.blocks[b].conv2.w);
        fn(prefix + ".conv2.b", head.blocks[b].conv2.b);
      }
    }
    auto& tail = m.tails[t];
    for (std::size_t i = 0; i < tail.convs.size(); ++i) {
      fn("tail." + id + ".conv" + std::to_string(i) + ".w", tail.convs[i].w);
      fn("tail." + id + ".conv" + std::to_string(i) + ".b", tail.convs[i].b);
    }
    fn("task." + id + ".embed", m.task_embeddings[t]);
  }
  fn("pos_embed", m.position_embeddings);
  for (std::size_t l = 0; l < m.encoder.size(); ++l) {
    const std::string p = "enc" + std::to_string(l);
    auto& layer = m.encoder[l];
    fn(p + ".ln_attn.gamma", layer.ln_attn.gamma);
    fn(p + ".ln_attn.beta", layer.ln_attn.beta);
    fn(p + ".attn.wq", layer.attn.wq);
    fn(p + ".attn.wk", layer.attn.wk);
    fn(p + ".attn.wv", layer.attn.wv);
    fn(p + ".attn.wo", layer.attn.wo);
    fn(p + ".ln_ffn.gamma", layer.ln_ffn.gamma);
    fn(p + ".ln_ffn.beta", layer.ln_ffn.beta);
    fn(p + ".ffn.w1", layer.ffn.w1);
    fn(p + ".ffn.b1", layer.ffn.b1);
    fn(p + ".ffn.w2", layer.ffn.w2);
    fn(p + ".ffn.b2", layer.ffn.b2);
  }
  for (std::size_t l = 0; l < m.decoder.size(); ++l) {
    const std::string p = "dec" + std::to_string(l);
    auto& layer = m.decoder[l];
    fn(p + ".ln_self.gamma", layer.ln_self.gamma);
    fn(p + ".ln_self.beta", layer.ln_self.beta);
    fn(p + ".self_attn.wq", layer.self_attn.wq);
    fn(p + ".self_attn.wk", layer.self_attn.wk);
    fn(p + ".self_attn.wv", layer.self_attn.wv);
    fn(p + ".self_attn.wo", layer.self_attn.wo);
    fn(p + ".ln_cross_q.gamma", layer.ln_cross_q.gamma);
    fn(p + ".ln_cross_q.beta", layer.ln_cross_q.beta);
    fn(p + ".ln_cross_kv.gamma", layer.ln_cross_kv.gamma);
    fn(p + ".ln_cross_kv.beta", layer.ln_cross_kv.beta);
    fn(p + ".cross_attn.wq", layer.cross_attn.wq);
    fn(p + ".cross_attn.wk", layer.cross_attn.wk);
    fn(p + ".cross_attn.wv", layer.cross_attn.wv);
    fn(p + ".cross_attn.wo", layer.cross_attn.wo);
    fn(p + ".ln_ffn.gamma", layer.ln_ffn.gamma);
    fn(p + ".ln_ffn.beta", layer.ln_ffn.beta);
    fn(p + ".ffn.w1", layer.ffn.w1);
    fn(p + ".ffn.b1", layer.ffn.b1);
    fn(p + ".ffn.w2", layer.ffn.w2);
    fn(p + ".ffn.b2", layer.ffn.b2);
  }
}

}  // namespace

void IptModel::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void IptModel::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::int64_t IptModel::parameter_count() const {
  std::int64_t total = 0;
  for_each_param([&](const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

Tensor IptModel::head_forward(const Tensor& x, const std::string& task_id) const {
  const HeadParams& head = heads[task_index(task_id)];
  if (!head.simple.empty()) {
    Tensor h = conv2d(x, head.simple[0].w, head.simple[0].b, 1, 1);
    h = conv2d(relu(h), head.simple[1].w, head.simple[1].b, 1, 1);
    return conv2d(relu(h), head.simple[2].w, head.simple[2].b, 1, 1);
  }
  Tensor h = conv2d(x, head.in.w, head.in.b, 1, 1);
  for (const ResBlockParams& blk : head.blocks) {
    Tensor r = conv2d(h, blk.conv1.w, blk.conv1.b, 1, 2);
    r = conv2d(relu(r), blk.conv2.w, blk.conv2.b, 1, 2);
    h = add(h, r);
  }
  return h;
}

Tensor IptModel::encoder_forward(const Tensor& tokens) const {
  const std::int64_t n = tokens.dim(tokens.rank() - 2);
  if (n > config.max_tokens()) {
    throw ConfigError("sequence length " + std::to_string(n) +
                      " exceeds position table " + std::to_string(config.max_tokens()));
  }
  Tensor pos = slice_rows(position_embeddings, n);
  Tensor y = add(tokens, pos);
  for (const EncoderLayerParams& layer : encoder) {
    Tensor ln = layer_norm(y, layer.ln_attn);
    y = add(multi_head_attention(ln, ln, ln, layer.attn, config.num_heads), y);
    y = add(ffn_forward(layer_norm(y, layer.ln_ffn), layer.ffn), y);
  }
  return y;
}

Tensor IptModel::task_embedding_flat(std::size_t idx) const {
  // Token components are channel-major, so [P*P, C] transposes to [C, P*P]
  // before flattening.
  return reshape(transpose(task_embeddings[idx], {1, 0}), {config.token_dim()});
}

Tensor IptModel::decoder_forward(const Tensor& enc_out, const std::string& task_id) const {
  const std::size_t idx = task_index(task_id);
  Tensor embed = task_embedding_flat(idx);
  Tensor z = enc_out;
  for (const DecoderLayerParams& layer : decoder) {
    Tensor ln_z = layer_norm(z, layer.ln_self);
    Tensor qk = add(ln_z, embed);
    z = add(multi_head_attention(qk, qk, ln_z, layer.self_attn, config.num_heads), z);
    Tensor q = add(layer_norm(z, layer.ln_cross_q), embed);
    Tensor kv = layer_norm(enc_out, layer.ln_cross_kv);
    z = add(multi_head_attention(q, kv, kv, layer.cross_attn, config.num_heads), z);
    z = add(ffn_forward(layer_norm(z, layer.ln_ffn), layer.ffn), z);
  }
  return z;
}

Tensor IptModel::tail_forward(const Tensor& features, const std::string& task_id) const {
  const std::size_t idx = task_index(task_id);
  const TailParams& tail = tails[idx];
  const std::int64_t k = config.tasks[idx].scale;
  if (k == 1) {
    return conv2d(features, tail.convs[0].w, tail.convs[0].b, 1, 1);
  }
  if (k == 2 || k == 3) {
    return pixel_shuffle(conv2d(features, tail.convs[0].w, tail.convs[0].b, 1, 1), k);
  }
  Tensor h = pixel_shuffle(conv2d(features, tail.convs[0].w, tail.convs[0].b, 1, 1), 2);
  h = pixel_shuffle(conv2d(h, tail.convs[1].w, tail.convs[1].b, 1, 1), 2);
  return conv2d(h, tail.convs[2].w, tail.convs[2].b, 1, 1);
}

IptModel::ForwardResult IptModel::forward_with_features(const Tensor& x,
                                                        const std::string& task_id) const {
  if (x.rank() != 4) throw DimensionError("forward expects [B,3,H,W], got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(2), w = x.dim(3);
  if (h % config.patch != 0 || w % config.patch != 0) {
    throw DimensionError("input extents " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch " + std::to_string(config.patch));
  }
  Tensor feat = head_forward(x, task_id);
  Tensor tokens = patchify(feat, config.patch);
  Tensor enc = encoder_forward(tokens);
  Tensor dec = decoder_forward(enc, task_id);
  Tensor fd = depatchify(dec, config.patch, h, w);
  ForwardResult r;
  r.decoder_tokens = dec;
  r.output = tail_forward(fd, task_id);
  return r;
}

Tensor IptModel::forward(const Tensor& x, const std::string& task_id) const {
  return forward_with_features(x, task_id).output;
}

IptModel IptModel::retain_task(const std::string& task_id) const {
  const std::size_t idx = task_index(task_id);
  IptModel m;
  m.config = config;
  m.config.tasks = {config.tasks[idx]};
  m.heads = {heads[idx]};
  m.tails = {tails[idx]};
  m.task_embeddings = {task_embeddings[idx]};
  m.position_embeddings = position_embeddings;
  m.encoder = encoder;
  m.decoder = decoder;
  return m;
}

std::int64_t expected_parameter_count(const ModelConfig& config) {
  const std::int64_t c = config.channels;
  const std::int64_t d = config.token_dim();
  const std::int64_t hidden = config.hidden_dim();
  auto conv = [](std::int64_t cout, std::int64_t cin, std::int64_t k) {
    return cout * cin * k * k + cout;
  };
  std::int64_t head;
  if (config.head_kind == "simple3") {
    head = conv(c, 3, 3) + 2 * conv(c, c, 3);
  } else {
    head = conv(c, 3, 3) + 4 * conv(c, c, 5);
  }
  std::int64_t per_task = head + d;  // + task embedding
  std::int64_t tails = 0;
  for (const TaskSpec& t : config.tasks) {
    switch (t.scale) {
      case 1:
        tails += conv(3, c, 3);
        break;
      case 2:
      case 3:
        tails += conv(3 * t.scale * t.scale, c, 3);
        break;
      case 4:
        tails += 2 * conv(4 * c, c, 3) + conv(3, c, 3);
        break;
      default:
        throw ConfigError("unsupported scale in census");
    }
  }
  const std::int64_t ln = 2 * d;
  const std::int64_t attn = 4 * d * d;
  const std::int64_t ffn = d * hidden + hidden + hidden * d + d;
  const std::int64_t enc_layer = 2 * ln + attn + ffn;
  const std::int64_t dec_layer = 4 * ln + 2 * attn + ffn;
  const std::int64_t num_tasks = static_cast<std::int64_t>(config.tasks.size());
  return num_tasks * per_task + tails + config.max_tokens() * d +
         config.num_encoder_layers * enc_layer + config.num_decoder_layers * dec_layer;
}

}  // namespace ipt
