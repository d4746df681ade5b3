#include "fmk/serialize.hpp"

#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "fmk/errors.hpp"

namespace fmk {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f32s(std::vector<std::uint8_t>& out, const std::vector<float>& vs) {
    for (float v : vs) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
    }
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<std::uint32_t>(bytes_[pos_]) |
                          static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8 |
                          static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16 |
                          static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24;
        pos_ += 4;
        return v;
    }
    std::vector<float> f32s(std::size_t n) {
        std::vector<float> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t bits = u32();
            std::memcpy(&out[i], &bits, 4);
        }
        return out;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw FormatError("model file truncated");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

constexpr std::uint8_t kVersion = '1';

} // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
    validate_model(model);
    std::vector<std::uint8_t> out;
    out.push_back('F');
    out.push_back('M');
    out.push_back('K');
    out.push_back(kVersion);
    put_u32(out, static_cast<std::uint32_t>(model.input_shape.size()));
    for (std::size_t d : model.input_shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(model.num_classes));
    put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
    for (const Layer& layer : model.layers) {
        out.push_back(static_cast<std::uint8_t>(layer.kind));
        if (!layer.has_params()) continue;
        for (std::size_t d : layer.weights.shape) put_u32(out, static_cast<std::uint32_t>(d));
        put_f32s(out, layer.weights.data);
        put_f32s(out, layer.bias.data);
    }
    return out;
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (r.u8() != 'F' || r.u8() != 'M' || r.u8() != 'K')
        throw FormatError("not a model file (bad magic)");
    const std::uint8_t version = r.u8();
    if (version != kVersion)
        throw VersionError("unsupported model file version tag '" + std::string(1, static_cast<char>(version)) + "'");

    Model model;
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) throw FormatError("bad input rank");
    for (std::uint32_t i = 0; i < rank; ++i) model.input_shape.push_back(r.u32());
    model.num_classes = r.u32();
    const std::uint32_t layer_count = r.u32();
    for (std::uint32_t li = 0; li < layer_count; ++li) {
        const std::uint8_t tag = r.u8();
        switch (static_cast<LayerKind>(tag)) {
            case LayerKind::Dense: {
                const std::size_t out_n = r.u32(), in_n = r.u32();
                if (out_n == 0 || in_n == 0) throw FormatError("bad dense dims");
                Tensor w({out_n, in_n}, r.f32s(out_n * in_n));
                Tensor b({out_n}, r.f32s(out_n));
                model.layers.push_back(Layer::dense(std::move(w), std::move(b)));
                break;
            }
            case LayerKind::Conv2d: {
                const std::size_t oc = r.u32(), ic = r.u32(), kh = r.u32(), kw = r.u32();
                if (oc == 0 || ic == 0 || kh == 0 || kw == 0) throw FormatError("bad conv dims");
                Tensor w({oc, ic, kh, kw}, r.f32s(oc * ic * kh * kw));
                Tensor b({oc}, r.f32s(oc));
                model.layers.push_back(Layer::conv2d(std::move(w), std::move(b)));
                break;
            }
            case LayerKind::ReLU:
                model.layers.push_back(Layer::relu());
                break;
            case LayerKind::Flatten:
                model.layers.push_back(Layer::flatten());
                break;
            default:
                throw FormatError("unknown layer tag " + std::to_string(tag));
        }
    }
    if (!r.at_end()) throw FormatError("trailing bytes after model data");
    try {
        validate_model(model);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("inconsistent model file: ") + e.what());
    }
    return model;
}

void save_model(const Model& model, const std::string& path) {
    const std::vector<std::uint8_t> bytes = serialize_model(model);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed for " + path);
}

Model load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
        throw Error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string model_fingerprint(const Model& model) {
    return sha256_hex(serialize_model(model));
}

} // namespace fmk
