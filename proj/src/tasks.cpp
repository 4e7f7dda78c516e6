#include "dlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dlab/errors.hpp"

namespace dlab {

namespace vocab {

int digit_token(int value) {
    if (value < 0 || value > 9) throw DataError("digit_token: value out of range");
    return kDigit0 + value;
}

int letter_token(int index) {
    if (index < 0 || index > 7) throw DataError("letter_token: index out of range");
    return kLetterA + index;
}

int hour_token(int hour) {
    if (hour < 1 || hour > 12) throw DataError("hour_token: hour out of range");
    return kHour1 + hour - 1;
}

int minute_token(int bucket) {
    if (bucket < 0 || bucket > 3)
        throw DataError("minute_token: bucket out of range");
    return kMinute0 + bucket;
}

int class_token(int index) {
    if (index < 0 || index > 7) throw DataError("class_token: index out of range");
    return kClass0 + index;
}

int attr_token(int index) {
    if (index < 0 || index > 7) throw DataError("attr_token: index out of range");
    return kAttr0 + index;
}

}  // namespace vocab

const std::vector<int>& numeric_token_set() {
    static const std::vector<int> tokens = [] {
        std::vector<int> t;
        for (int v = 0; v <= 9; ++v) t.push_back(vocab::digit_token(v));
        return t;
    }();
    return tokens;
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "count") return TaskKind::Count;
    if (name == "classify") return TaskKind::Classify;
    if (name == "clock") return TaskKind::ClockRead;
    if (name == "copy") return TaskKind::CopyOcr;
    if (name == "caption") return TaskKind::CaptionHeldOut;
    throw ConfigError("unknown task kind '" + name + "'");
}

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Count: return "count";
        case TaskKind::Classify: return "classify";
        case TaskKind::ClockRead: return "clock";
        case TaskKind::CopyOcr: return "copy";
        case TaskKind::CaptionHeldOut: return "caption";
    }
    throw InternalError("task_kind_name: bad kind");
}

namespace {

constexpr float kNoiseSigma = 0.08f;

std::vector<float> unit_vector(Rng& rng, int dim) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (float& x : v) {
        x = rng.normal();
        norm += static_cast<double>(x) * x;
    }
    float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm, 1e-12)));
    for (float& x : v) x *= inv;
    return v;
}

// Greedy max-min selection keeps class centers well separated even when the
// class count exceeds the dimensionality.
std::vector<std::vector<float>> spread_centers(const char* tag, int count,
                                               int dim) {
    Rng rng = Rng(0x5EEDC0DEULL).substream(tag);
    std::vector<std::vector<float>> pool;
    int candidates = count * 24;
    pool.reserve(static_cast<std::size_t>(candidates));
    for (int i = 0; i < candidates; ++i) pool.push_back(unit_vector(rng, dim));

    auto dist2 = [dim](const std::vector<float>& a, const std::vector<float>& b) {
        double s = 0.0;
        for (int i = 0; i < dim; ++i) {
            double d = static_cast<double>(a[static_cast<std::size_t>(i)]) -
                       b[static_cast<std::size_t>(i)];
            s += d * d;
        }
        return s;
    };

    std::vector<std::vector<float>> picked;
    picked.push_back(pool[0]);
    while (static_cast<int>(picked.size()) < count) {
        int best = -1;
        double best_score = -1.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            double nearest = 1e30;
            for (const auto& p : picked) nearest = std::min(nearest, dist2(pool[i], p));
            if (nearest > best_score) {
                best_score = nearest;
                best = static_cast<int>(i);
            }
        }
        picked.push_back(pool[static_cast<std::size_t>(best)]);
    }
    return picked;
}

const std::vector<std::vector<float>>& centers(TaskKind kind, int d_v,
                                               bool secondary = false) {
    // Codebooks are world structure: fixed across task seeds.
    static std::map<std::string, std::vector<std::vector<float>>> cache;
    std::string key = task_kind_name(kind) + (secondary ? "/b" : "/a") + "/" +
                      std::to_string(d_v);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    int count = 0;
    switch (kind) {
        case TaskKind::Count: count = 9; break;
        case TaskKind::Classify: count = 8; break;
        case TaskKind::ClockRead: count = secondary ? 4 : 12; break;
        case TaskKind::CopyOcr: count = 1; break;
        case TaskKind::CaptionHeldOut: count = 8; break;  // classes and attributes
    }
    return cache.emplace(key, spread_centers(key.c_str(), count, d_v))
        .first->second;
}

DenseTensor noise_features(Rng& rng, int tokens, int d_v) {
    DenseTensor f({tokens, d_v});
    for (std::int64_t i = 0; i < f.size(); ++i)
        f[i] = kNoiseSigma * rng.normal();
    return f;
}

void write_center(DenseTensor& f, int token, const std::vector<float>& c) {
    for (int i = 0; i < f.cols(); ++i) f.at(token, i) += c[static_cast<std::size_t>(i)];
}

Example make_example(TaskKind kind, Rng& rng, int tokens, int d_v) {
    Example ex;
    ex.visual = noise_features(rng, tokens, d_v);
    switch (kind) {
        case TaskKind::Count: {
            int k = 1 + rng.uniform_int(9);
            for (int t = 0; t < tokens; ++t)
                write_center(ex.visual, t,
                             centers(kind, d_v)[static_cast<std::size_t>(k - 1)]);
            ex.prompt = {vocab::kCountMarker};
            ex.answer = {vocab::digit_token(k)};
            break;
        }
        case TaskKind::Classify: {
            int c = rng.uniform_int(8);
            for (int t = 0; t < tokens; ++t)
                write_center(ex.visual, t,
                             centers(kind, d_v)[static_cast<std::size_t>(c)]);
            ex.prompt = {vocab::kClassifyMarker};
            ex.answer = {vocab::letter_token(c)};
            break;
        }
        case TaskKind::ClockRead: {
            int h = 1 + rng.uniform_int(12);
            int m = rng.uniform_int(4);
            write_center(ex.visual, 0,
                         centers(kind, d_v)[static_cast<std::size_t>(h - 1)]);
            write_center(ex.visual, std::min(1, tokens - 1),
                         centers(kind, d_v, true)[static_cast<std::size_t>(m)]);
            ex.prompt = {vocab::kClockMarker};
            ex.answer = {vocab::hour_token(h), vocab::minute_token(m)};
            break;
        }
        case TaskKind::CopyOcr: {
            int x = rng.uniform_int(8);
            ex.prompt = {vocab::kCopyMarker, vocab::letter_token(x)};
            ex.answer = {vocab::letter_token(x)};
            break;
        }
        case TaskKind::CaptionHeldOut: {
            int c = rng.uniform_int(8);
            int a = rng.uniform_int(8);
            write_center(ex.visual, 0,
                         centers(kind, d_v)[static_cast<std::size_t>(c)]);
            if (tokens > 1)
                write_center(ex.visual, 1,
                             centers(kind, d_v)[static_cast<std::size_t>(c)]);
            if (tokens > 2)
                write_center(ex.visual, 2,
                             centers(kind, d_v, true)[static_cast<std::size_t>(a)]);
            if (tokens > 3)
                write_center(ex.visual, 3,
                             centers(kind, d_v, true)[static_cast<std::size_t>(a)]);
            ex.prompt = {vocab::kCaptionMarker};
            ex.answer = {vocab::kThe, vocab::attr_token(a), vocab::class_token(c)};
            break;
        }
    }
    return ex;
}

TaskDataset make_split(const SyntheticTaskSpec& spec, const char* split, int n,
                       int tokens, int d_v) {
    TaskDataset ds;
    ds.name = spec.name.empty() ? task_kind_name(spec.kind) : spec.name;
    ds.kind = spec.kind;
    Rng rng = Rng(spec.seed).substream(split);
    ds.examples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ds.examples.push_back(make_example(spec.kind, rng, tokens, d_v));

    // Generation-time dataset contracts.
    int numeric = 0, total = 0;
    for (const Example& ex : ds.examples) {
        for (int tok : ex.answer) {
            ++total;
            bool is_numeric = tok >= vocab::kDigit0 && tok < vocab::kDigit0 + 10;
            if (is_numeric) ++numeric;
            if (spec.kind == TaskKind::Count && !is_numeric)
                throw InternalError("count answers must be digit words");
        }
    }
    if (spec.kind == TaskKind::CaptionHeldOut && total > 0 &&
        numeric * 20 >= total)
        throw InternalError("caption answers unexpectedly numeric-heavy");
    return ds;
}

}  // namespace

TaskData generate_task(const SyntheticTaskSpec& spec, int visual_tokens,
                       int d_v) {
    if (spec.train_n < 0 || spec.eval_n < 0)
        throw ConfigError("generate_task: negative split size");
    if (visual_tokens < 1 || d_v < 1)
        throw ConfigError("generate_task: bad feature dimensions");
    TaskData data;
    data.train = make_split(spec, "train", spec.train_n, visual_tokens, d_v);
    data.eval = make_split(spec, "eval", spec.eval_n, visual_tokens, d_v);
    return data;
}

int count_label(const Example& ex) {
    if (ex.answer.empty()) throw DataError("count_label: empty answer");
    int tok = ex.answer[0];
    if (tok < vocab::kDigit0 || tok >= vocab::kDigit0 + 10)
        throw DataError("count_label: not a count example");
    return tok - vocab::kDigit0;
}

}  // namespace dlab
