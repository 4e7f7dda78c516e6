#include "dlab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <vector>

namespace dlab {

namespace {

constexpr char kMagic[4] = {'D', 'L', 'A', 'B'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
    put_u32(out, std::bit_cast<std::uint32_t>(f));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw FormatError("checkpoint: truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(
            static_cast<std::uint8_t>(buf[pos]) |
            (static_cast<std::uint8_t>(buf[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(
                     static_cast<std::uint8_t>(buf[pos + i]))
                 << (8 * i);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_tensors(const std::map<std::string, DenseTensor>& tensors,
                  const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.empty() || name.size() > 0xFFFF)
            throw FormatError("checkpoint: bad tensor name '" + name + "'");
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        out.push_back(0);  // dtype f32
        out.push_back(static_cast<char>(t.rank()));
        for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        if constexpr (std::endian::native == std::endian::little) {
            out.append(reinterpret_cast<const char*>(t.data()),
                       static_cast<std::size_t>(t.size()) * sizeof(float));
        } else {
            for (float f : t.buffer()) put_f32(out, f);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw FormatError("checkpoint: write failed for " + path);
}

std::map<std::string, DenseTensor> load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
    Reader r{buf};

    if (r.bytes(4) != std::string(kMagic, 4))
        throw FormatError("checkpoint: bad magic in " + path);
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " +
                          std::to_string(version));
    std::uint32_t count = r.u32();

    std::map<std::string, DenseTensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = r.u16();
        if (name_len == 0) throw FormatError("checkpoint: empty tensor name");
        std::string name = r.bytes(name_len);
        std::uint8_t dtype = r.u8();
        if (dtype != 0)
            throw FormatError("checkpoint: unsupported dtype " +
                              std::to_string(dtype) + " for " + name);
        std::uint8_t rank = r.u8();
        if (rank < 1 || rank > 4)
            throw FormatError("checkpoint: bad rank for " + name);
        std::vector<int> shape;
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            std::uint32_t dim = r.u32();
            if (dim == 0 || dim > (1u << 24))
                throw FormatError("checkpoint: bad dimension for " + name);
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
            if (numel > (std::size_t{1} << 32))
                throw FormatError("checkpoint: oversized tensor " + name);
        }
        std::vector<float> data(numel);
        if constexpr (std::endian::native == std::endian::little) {
            r.need(numel * sizeof(float));
            std::memcpy(data.data(), buf.data() + r.pos, numel * sizeof(float));
            r.pos += numel * sizeof(float);
        } else {
            for (std::size_t j = 0; j < numel; ++j) data[j] = r.f32();
        }
        if (!tensors.emplace(name, DenseTensor(shape, std::move(data))).second)
            throw FormatError("checkpoint: duplicate tensor " + name);
    }
    if (r.pos != buf.size())
        throw FormatError("checkpoint: trailing bytes in " + path);
    return tensors;
}

void save_checkpoint(const TinyLmm& model, const std::string& path) {
    save_tensors(model.params, path);
}

TinyLmm load_checkpoint(const std::string& path, const ModelConfig& cfg,
                        float lora_alpha) {
    cfg.validate();
    std::map<std::string, DenseTensor> tensors = load_tensors(path);

    TinyLmm model;
    model.cfg = cfg;

    std::set<std::string> canonical;
    for (const std::string& name : canonical_param_names(cfg))
        canonical.insert(name);

    std::set<std::string> moe_names;
    for (int l = 0; l < cfg.layers; ++l)
        for (const char* f : {"moe_gate", "moe_wgate", "moe_wup", "moe_wdown"})
            moe_names.insert(block_param(l, f));

    std::set<std::string> lora_targets;
    int lora_rank = 0;
    for (const auto& [name, t] : tensors) {
        if (canonical.count(name)) {
            if (t.shape() != param_shape(cfg, name))
                throw FormatError("checkpoint: shape mismatch for " + name);
            continue;
        }
        if (moe_names.count(name)) continue;
        if (name.rfind("lora.", 0) == 0 && name.size() > 7 &&
            (name.compare(name.size() - 2, 2, ".a") == 0 ||
             name.compare(name.size() - 2, 2, ".b") == 0)) {
            std::string target = name.substr(5, name.size() - 7);
            if (!canonical.count(target) ||
                param_shape(cfg, target).size() != 2)
                throw FormatError("checkpoint: adapter for unknown target " +
                                  name);
            lora_targets.insert(target);
            continue;
        }
        throw FormatError("checkpoint: unexpected tensor " + name);
    }

    for (const std::string& name : canonical)
        if (!tensors.count(name))
            throw FormatError("checkpoint: missing tensor " + name);

    bool any_moe = false, all_moe = true;
    for (const std::string& name : moe_names) {
        bool present = tensors.count(name) > 0;
        any_moe = any_moe || present;
        all_moe = all_moe && present;
        if (present) {
            std::string field = name.substr(name.find('.') + 1);
            std::vector<int> want =
                field == "moe_gate"
                    ? std::vector<int>{cfg.d, 2}
                    : param_shape(cfg, name.substr(0, name.find('.')) + "." +
                                           field.substr(4));
            if (tensors.at(name).shape() != want)
                throw FormatError("checkpoint: shape mismatch for " + name);
        }
    }
    if (any_moe && !all_moe)
        throw FormatError("checkpoint: incomplete mixture tensors");

    for (const std::string& target : lora_targets) {
        auto a = tensors.find("lora." + target + ".a");
        auto b = tensors.find("lora." + target + ".b");
        if (a == tensors.end() || b == tensors.end())
            throw FormatError("checkpoint: incomplete adapter for " + target);
        std::vector<int> w = param_shape(cfg, target);
        const std::vector<int>& sa = a->second.shape();
        const std::vector<int>& sb = b->second.shape();
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != w[1] ||
            sb[0] != w[0] || sa[0] != sb[1] || sa[0] < 1)
            throw FormatError("checkpoint: bad adapter shape for " + target);
        if (lora_rank == 0) lora_rank = sa[0];
        if (sa[0] != lora_rank)
            throw FormatError("checkpoint: inconsistent adapter rank");
    }

    model.params = std::move(tensors);
    model.moe = any_moe;
    if (!lora_targets.empty()) {
        model.lora_targets.assign(lora_targets.begin(), lora_targets.end());
        model.lora_rank = lora_rank;
        model.lora_alpha = lora_alpha;
    }
    return model;
}

}  // namespace dlab
