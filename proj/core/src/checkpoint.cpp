#include "trusttune/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "trusttune/errors.hpp"
#include "trusttune/hash.hpp"

namespace trusttune {

namespace {

constexpr char kMagic[8] = {'T', 'T', 'C', 'K', 'P', 'T', '1', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) {
        if (pos + n > data.size()) throw ParseError(path + ": truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = data.substr(pos, n);
        pos += n;
        return out;
    }
};

}  // namespace

const Tensor& Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) return t;
    }
    throw ParseError("checkpoint has no array named '" + name + "'");
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays,
                     const std::string& config_echo) {
    std::string payload;
    payload.append(kMagic, 8);
    put_u32(payload, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, tensor] : arrays) {
        put_u32(payload, static_cast<std::uint32_t>(name.size()));
        payload.append(name);
        put_u32(payload, static_cast<std::uint32_t>(tensor->shape.size()));
        for (std::size_t d : tensor->shape) put_u64(payload, d);
        for (double v : tensor->values) put_f64(payload, v);
    }
    put_u32(payload, static_cast<std::uint32_t>(config_echo.size()));
    payload.append(config_echo);

    Fnv1a64 h;
    h.update(payload.data(), payload.size());
    put_u64(payload, h.digest());

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 8 + 4 + 8 || std::memcmp(data.data(), kMagic, 8) != 0)
        throw ParseError(path + ": not a TTCKPT1 checkpoint");

    Fnv1a64 h;
    h.update(data.data(), data.size() - 8);

    Reader r{data, 8, path};
    Checkpoint ckpt;
    const std::uint32_t count = r.u32();
    for (std::uint32_t a = 0; a < count; ++a) {
        const std::string name = r.bytes(r.u32());
        const std::uint32_t ndim = r.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(r.u64());
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = r.f64();
        ckpt.arrays.emplace_back(name, Tensor(shape, std::move(values)));
    }
    ckpt.config_echo = r.bytes(r.u32());
    ckpt.content_hash = r.u64();
    if (r.pos != data.size()) throw ParseError(path + ": trailing bytes after checkpoint");
    if (ckpt.content_hash != h.digest()) throw ParseError(path + ": checkpoint hash mismatch");
    return ckpt;
}

std::uint64_t file_content_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    Fnv1a64 h;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    return h.digest();
}

void save_encoder_checkpoint(const std::string& path, const EncoderParams& params) {
    nlohmann::json cfg;
    cfg["vocab_size"] = params.config.vocab_size;
    cfg["embed_dim"] = params.config.embed_dim;
    cfg["blocks"] = params.config.blocks;
    cfg["ffn_hidden"] = params.config.ffn_hidden;
    cfg["max_len"] = params.config.max_len;
    cfg["pooling"] = params.config.pooling == Pooling::kFirstToken ? "first_token" : "mean";

    auto& mut = const_cast<EncoderParams&>(params);
    std::vector<std::pair<std::string, const Tensor*>> arrays;
    for (auto& [name, t] : mut.named_params()) arrays.emplace_back(name, t);
    save_checkpoint(path, arrays, cfg.dump());
}

EncoderParams load_encoder_checkpoint(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(ckpt.config_echo);
    } catch (const nlohmann::json::exception&) {
        throw ParseError(path + ": malformed config echo");
    }
    EncoderConfig config;
    config.vocab_size = cfg.at("vocab_size").get<std::size_t>();
    config.embed_dim = cfg.at("embed_dim").get<std::size_t>();
    config.blocks = cfg.at("blocks").get<std::size_t>();
    config.ffn_hidden = cfg.at("ffn_hidden").get<std::size_t>();
    config.max_len = cfg.at("max_len").get<std::size_t>();
    config.pooling =
        cfg.at("pooling").get<std::string>() == "mean" ? Pooling::kMean : Pooling::kFirstToken;

    Rng scratch(0);
    EncoderParams params = EncoderParams::init(config, scratch);
    for (auto& [name, tensor] : params.named_params()) {
        const Tensor& stored = ckpt.find(name);
        if (stored.shape != tensor->shape)
            throw ParseError(path + ": array '" + name + "' has shape " + shape_str(stored.shape) +
                             ", expected " + shape_str(tensor->shape));
        tensor->values = stored.values;
        tensor->grad.reset();
    }
    return params;
}

}  // namespace trusttune
