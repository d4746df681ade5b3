#include "fmk/keyed_head.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fmk/errors.hpp"
#include "fmk/rng.hpp"

namespace fmk {

UserKey KeyRegistry::register_user(const std::string& user_id, std::optional<std::uint64_t> key, bool overwrite) {
    if (user_id.empty()) throw ArgumentError("user id must be non-empty");
    if (!overwrite && entries_.count(user_id))
        throw ConflictError("user '" + user_id + "' already registered");
    std::uint64_t k;
    if (key) {
        k = *key;
        if (k == 0) throw ArgumentError("key must be non-zero");
    } else {
        std::random_device rd;
        do {
            k = (static_cast<std::uint64_t>(rd()) << 32) | rd();
        } while (k == 0);
    }
    entries_[user_id] = k;
    return UserKey{user_id, k};
}

std::uint64_t KeyRegistry::key_for(const std::string& user_id) const {
    auto it = entries_.find(user_id);
    if (it == entries_.end()) throw KeyError("unknown user '" + user_id + "'");
    return it->second;
}

namespace {

std::string key_hex(std::uint64_t key) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(key));
    return buf;
}

std::uint64_t parse_key_hex(const std::string& s) {
    if (s.size() != 16 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
        throw FormatError("registry key must be 16 hex digits, got '" + s + "'");
    return std::stoull(s, nullptr, 16);
}

} // namespace

void KeyRegistry::save(const std::string& path) const {
    nlohmann::json users = nlohmann::json::array();
    for (const auto& [id, key] : entries_)
        users.push_back({{"id", id}, {"key", key_hex(key)}});
    nlohmann::json doc{{"users", users}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << doc.dump(2) << "\n";
}

KeyRegistry KeyRegistry::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    nlohmann::json doc;
    try {
        f >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("registry parse error: " + std::string(e.what()));
    }
    if (!doc.is_object() || !doc.contains("users") || !doc["users"].is_array())
        throw FormatError("registry file must contain a users array");
    KeyRegistry reg;
    for (const auto& u : doc["users"]) {
        const std::string id = u.at("id").get<std::string>();
        const std::uint64_t key = parse_key_hex(u.at("key").get<std::string>());
        if (key == 0) throw FormatError("registry holds zero key for '" + id + "'");
        if (reg.entries_.count(id)) throw FormatError("duplicate user '" + id + "' in registry");
        reg.entries_[id] = key;
    }
    return reg;
}

BinaryHead derive_head(std::uint64_t key, std::size_t n_classes) {
    if (key == 0) throw ArgumentError("derive_head: key must be non-zero");
    if (n_classes < 2) throw ArgumentError("derive_head: need at least 2 classes");
    const double a = std::sqrt(6.0 / (static_cast<double>(n_classes) + 2.0));
    SplitMix64 rng(key);
    BinaryHead head;
    head.source_key = key;
    head.n_classes = n_classes;
    head.weights = Tensor({n_classes, 2});
    for (std::size_t i = 0; i < n_classes * 2; ++i)
        head.weights.data[i] = static_cast<float>(-a + 2.0 * a * rng.next_double());
    return head;
}

CompositeModel::CompositeModel(const Model& base, BinaryHead head) : base_(&base), head_(std::move(head)) {
    if (base.num_classes != head_.n_classes)
        throw ArgumentError("head derived for " + std::to_string(head_.n_classes) + " classes, model has " +
                            std::to_string(base.num_classes));
}

std::array<float, 2> CompositeModel::binary_logits_from_base(const Tensor& base_logits) const {
    const std::size_t n = head_.n_classes;
    if (base_logits.numel() != n) throw ShapeError("base logits length mismatch");
    double acc0 = 0.0, acc1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc0 += static_cast<double>(head_.weights.data[i * 2]) * base_logits.data[i];
        acc1 += static_cast<double>(head_.weights.data[i * 2 + 1]) * base_logits.data[i];
    }
    return {static_cast<float>(acc0), static_cast<float>(acc1)};
}

std::array<float, 2> CompositeModel::binary_logits(const Tensor& input) const {
    return binary_logits_from_base(forward(*base_, input));
}

Tensor CompositeModel::backward_to_input(const ForwardTrace& trace, const std::array<float, 2>& grad_on_binary) const {
    const std::size_t n = head_.n_classes;
    Tensor base_grad({n});
    for (std::size_t i = 0; i < n; ++i)
        base_grad.data[i] = static_cast<float>(static_cast<double>(head_.weights.data[i * 2]) * grad_on_binary[0] +
                                               static_cast<double>(head_.weights.data[i * 2 + 1]) * grad_on_binary[1]);
    return backward(*base_, trace, base_grad).input_grad;
}

std::size_t binary_top1(const std::array<float, 2>& logits) {
    return logits[1] > logits[0] ? 1 : 0;
}

std::size_t CompositeModel::binary_top1(const Tensor& input) const {
    return fmk::binary_top1(binary_logits(input));
}

} // namespace fmk
