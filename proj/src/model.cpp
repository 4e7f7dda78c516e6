#include "dlab/model.hpp"

#include <cmath>
#include <utility>

namespace dlab {

namespace {

constexpr float kPeScale = 0.1f;

// Per-tape cache so each parameter becomes a leaf exactly once.
struct LeafCache {
    Tape* tape;
    const TinyLmm* model;
    std::map<std::string, Value> leaves;

    Value get(const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        Value v = tape->leaf(model->param(name), name);
        leaves.emplace(name, v);
        return v;
    }
};

bool lora_wrapped(const TinyLmm& m, const std::string& name) {
    for (const auto& t : m.lora_targets)
        if (t == name) return true;
    return false;
}

// x times the named weight, routing through the adapter when one is attached.
Value param_matmul(LeafCache& cache, Value x, const std::string& name) {
    const TinyLmm& m = *cache.model;
    Value base = matmul(x, cache.get(name));
    if (!lora_wrapped(m, name)) return base;
    Value bx = matmul(x, cache.get("lora." + name + ".b"));
    Value delta = matmul(bx, cache.get("lora." + name + ".a"));
    return add(base, scale(delta, m.lora_alpha / static_cast<float>(m.lora_rank)));
}

Value attention_nodes(LeafCache& cache, int layer, Value x_pre, bool causal) {
    const ModelConfig& cfg = cache.model->cfg;
    Value xn = rms_norm(x_pre, cache.get(block_param(layer, "ln1")));
    Value q = param_matmul(cache, xn, block_param(layer, "wq"));
    Value k = param_matmul(cache, xn, block_param(layer, "wk"));
    Value v = param_matmul(cache, xn, block_param(layer, "wv"));
    float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(cfg.d_k));
    std::vector<Value> heads;
    heads.reserve(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
        Value qh = slice_cols(q, h * cfg.d_k, cfg.d_k);
        Value kh = slice_cols(k, h * cfg.d_k, cfg.d_k);
        Value vh = slice_cols(v, h * cfg.d_k, cfg.d_k);
        Value att = softmax_masked(matmul_nt(qh, kh), inv_sqrt_dk, causal);
        heads.push_back(matmul(att, vh));
    }
    Value joined = cfg.heads == 1 ? heads[0] : concat_cols(heads);
    return param_matmul(cache, joined, block_param(layer, "wo"));
}

Value mlp_path(LeafCache& cache, Value xn, const std::string& gate_name,
               const std::string& up_name, const std::string& down_name) {
    Value g = silu(param_matmul(cache, xn, gate_name));
    Value u = param_matmul(cache, xn, up_name);
    return param_matmul(cache, mul(g, u), down_name);
}

Value mlp_nodes(LeafCache& cache, int layer, Value x_pre) {
    const TinyLmm& m = *cache.model;
    Value xn = rms_norm(x_pre, cache.get(block_param(layer, "ln2")));
    if (!m.moe) {
        return mlp_path(cache, xn, block_param(layer, "wgate"),
                        block_param(layer, "wup"), block_param(layer, "wdown"));
    }
    Value f_pt = mlp_path(cache, xn, block_param(layer, "wgate"),
                          block_param(layer, "wup"), block_param(layer, "wdown"));
    Value f_new =
        mlp_path(cache, xn, block_param(layer, "moe_wgate"),
                 block_param(layer, "moe_wup"), block_param(layer, "moe_wdown"));
    Value gate_logits = matmul(xn, cache.get(block_param(layer, "moe_gate")));
    Value weights = softmax_masked(gate_logits, 1.0f, /*causal=*/false);
    Value w_pt = slice_cols(weights, 0, 1);
    Value w_new = slice_cols(weights, 1, 1);
    return add(mul_cols(f_pt, w_pt), mul_cols(f_new, w_new));
}

}  // namespace

void ModelConfig::validate() const {
    if (layers < 0 || d <= 0 || heads <= 0 || d_k <= 0 || hidden <= 0 ||
        vocab <= 0 || visual_tokens <= 0 || d_v <= 0)
        throw ConfigError("ModelConfig: dimensions must be positive");
    if (heads * d_k != d)
        throw ConfigError("ModelConfig: heads * d_k must equal d");
}

const DenseTensor& TinyLmm::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw DataError("TinyLmm: no parameter " + name);
    return it->second;
}

DenseTensor& TinyLmm::param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw DataError("TinyLmm: no parameter " + name);
    return it->second;
}

bool TinyLmm::has_param(const std::string& name) const {
    return params.count(name) > 0;
}

std::string block_param(int layer, const std::string& field) {
    return "block" + std::to_string(layer) + "." + field;
}

std::vector<std::string> canonical_param_names(const ModelConfig& cfg) {
    std::vector<std::string> names = {"perception.w", "projector.w", "embed.w",
                                      "head.w"};
    for (int l = 0; l < cfg.layers; ++l)
        for (const char* f :
             {"wq", "wk", "wv", "wo", "wgate", "wup", "wdown", "ln1", "ln2"})
            names.push_back(block_param(l, f));
    return names;
}

std::vector<int> param_shape(const ModelConfig& cfg, const std::string& name) {
    if (name == "perception.w") return {cfg.d_v, cfg.d_v};
    if (name == "projector.w") return {cfg.d_v, cfg.d};
    if (name == "embed.w") return {cfg.vocab, cfg.d};
    if (name == "head.w") return {cfg.d, cfg.vocab};
    auto dot = name.find('.');
    std::string field = name.substr(dot + 1);
    if (field == "wq" || field == "wk" || field == "wv" || field == "wo")
        return {cfg.d, cfg.d};
    if (field == "wgate" || field == "wup") return {cfg.d, cfg.hidden};
    if (field == "wdown") return {cfg.hidden, cfg.d};
    if (field == "ln1" || field == "ln2") return {cfg.d};
    throw InternalError("param_shape: unknown parameter " + name);
}

namespace {

DenseTensor init_tensor(const ModelConfig& cfg, const std::string& name,
                        const Rng& root) {
    Rng rng = root.substream(name);
    std::vector<int> shape = param_shape(cfg, name);
    DenseTensor t(shape);
    auto dot = name.find('.');
    std::string field = name.substr(dot + 1);
    if (field == "ln1" || field == "ln2") {
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = 1.0f;
        return t;
    }
    float sigma;
    if (name == "embed.w" || name == "head.w") {
        sigma = 0.1f;
    } else {
        sigma = 1.0f / std::sqrt(static_cast<float>(shape[0]));
        // Residual-write matrices start smaller so depth keeps r bounded.
        if (field == "wo" || field == "wdown")
            sigma /= std::sqrt(2.0f * std::max(1, cfg.layers));
    }
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = sigma * rng.normal();
    return t;
}

}  // namespace

TinyLmm init_model(const ModelConfig& cfg, const Rng& rng) {
    cfg.validate();
    TinyLmm m;
    m.cfg = cfg;
    for (const std::string& name : canonical_param_names(cfg))
        m.params[name] = init_tensor(cfg, name, rng);
    return m;
}

DenseTensor positional_encoding(int positions, int d) {
    DenseTensor pe({positions, d});
    for (int p = 0; p < positions; ++p) {
        for (int i = 0; i < d; i += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / d);
            pe.at(p, i) = kPeScale * static_cast<float>(std::sin(p * freq));
            if (i + 1 < d)
                pe.at(p, i + 1) =
                    kPeScale * static_cast<float>(std::cos(p * freq));
        }
    }
    return pe;
}

ModelNodes build_forward(Tape& tape, const TinyLmm& model,
                         const SequenceInput& input) {
    const ModelConfig& cfg = model.cfg;
    cfg.validate();
    if (input.visual.rank() != 2 || input.visual.dim(0) != cfg.visual_tokens ||
        input.visual.dim(1) != cfg.d_v)
        throw DataError("build_forward: visual features must be S_v x d_v");
    if (input.prompt.empty())
        throw DataError("build_forward: prompt must not be empty");

    LeafCache cache{&tape, &model, {}};
    Value embed = cache.get("embed.w");

    std::vector<Value> parts;
    parts.push_back(embed_rows(embed, input.prompt));
    Value vis_in = tape.constant(input.visual);
    Value vis = matmul(matmul(vis_in, cache.get("perception.w")),
                       cache.get("projector.w"));
    parts.push_back(vis);
    if (!input.continuation.empty())
        parts.push_back(embed_rows(embed, input.continuation));

    int seq = input.text_len() + cfg.visual_tokens + input.cont_len();
    Value r0 = add_const(concat_rows(parts), positional_encoding(seq, cfg.d));

    ModelNodes nodes;
    nodes.r.push_back(r0);
    Value r = r0;
    for (int l = 0; l < cfg.layers; ++l) {
        Value a = attention_nodes(cache, l, r, /*causal=*/true);
        Value r_mid = add(r, a);
        Value f = mlp_nodes(cache, l, r_mid);
        r = add(r_mid, f);
        nodes.a.push_back(a);
        nodes.f.push_back(f);
        nodes.r.push_back(r);
    }
    nodes.z = matmul(r, cache.get("head.w"));
    return nodes;
}

ForwardTrace forward_trace(const TinyLmm& model, const SequenceInput& input) {
    Tape tape;
    ModelNodes nodes = build_forward(tape, model, input);
    ForwardTrace t;
    for (Value v : nodes.r) t.r.push_back(tape.value(v));
    for (Value v : nodes.a) t.a.push_back(tape.value(v));
    for (Value v : nodes.f) t.f.push_back(tape.value(v));
    t.z = tape.value(nodes.z);
    return t;
}

ForwardTrace forward_trace(const TinyLmm& model, const std::vector<int>& text,
                           const DenseTensor& visual) {
    return forward_trace(model, SequenceInput{text, visual, {}});
}

DenseTensor attention_sublayer(const TinyLmm& model, int layer,
                               const DenseTensor& x, bool causal) {
    Tape tape;
    LeafCache cache{&tape, &model, {}};
    Value out = attention_nodes(cache, layer, tape.constant(x), causal);
    return tape.value(out);
}

DenseTensor mlp_sublayer(const TinyLmm& model, int layer,
                         const DenseTensor& x) {
    Tape tape;
    LeafCache cache{&tape, &model, {}};
    Value out = mlp_nodes(cache, layer, tape.constant(x));
    return tape.value(out);
}

int argmax_lowest(const float* row, int n) {
    int best = 0;
    for (int c = 1; c < n; ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

std::vector<int> greedy_decode(
    const TinyLmm& model, const std::vector<int>& prompt,
    const DenseTensor& visual, int max_len, int eoa_id,
    const std::function<void(const DenseTensor&)>& step_probs) {
    std::vector<int> generated;
    for (int step = 0; step < max_len; ++step) {
        ForwardTrace t =
            forward_trace(model, SequenceInput{prompt, visual, generated});
        int last = t.z.rows() - 1;
        DenseTensor row({1, t.z.cols()});
        for (int c = 0; c < t.z.cols(); ++c) row.at(0, c) = t.z.at(last, c);
        DenseTensor probs = softmax_rows(row, 1.0f);
        if (step_probs) step_probs(probs);
        int tok = argmax_lowest(probs.data(), probs.cols());
        if (tok == eoa_id) break;
        generated.push_back(tok);
    }
    return generated;
}

}  // namespace dlab
