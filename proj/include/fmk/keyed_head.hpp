#ifndef FMK_KEYED_HEAD_HPP
#define FMK_KEYED_HEAD_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "fmk/nn.hpp"

namespace fmk {

struct UserKey {
    std::string user_id;
    std::uint64_t key = 0;
};

/// Supplier-side bookkeeping: user id -> secret key, persisted as JSON
/// {"users": [{"id": ..., "key": <16 hex digits>}, ...]}, sorted by id.
class KeyRegistry {
public:
    /// Stores (and returns) the key for `user_id`. When no key is supplied
    /// one is drawn from OS entropy. Re-registering an existing id is a
    /// ConflictError unless `overwrite` is set. Keys are never zero.
    UserKey register_user(const std::string& user_id, std::optional<std::uint64_t> key = std::nullopt,
                          bool overwrite = false);

    std::uint64_t key_for(const std::string& user_id) const; // KeyError if absent
    bool contains(const std::string& user_id) const { return entries_.count(user_id) != 0; }
    std::size_t size() const { return entries_.size(); }
    const std::map<std::string, std::uint64_t>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static KeyRegistry load(const std::string& path);

    bool operator==(const KeyRegistry& other) const { return entries_ == other.entries_; }

private:
    std::map<std::string, std::uint64_t> entries_;
};

/// Per-user N x 2 linear map over the base model's raw logits. No bias.
/// Bit-exactly reproducible from (source_key, n_classes).
struct BinaryHead {
    Tensor weights; // {n_classes, 2}
    std::uint64_t source_key = 0;
    std::size_t n_classes = 0;
};

/// Derives the head from a key: entries drawn row-major from a splitmix64
/// stream seeded by the key, each 64-bit output mapped to [0,1) via its top
/// 53 bits and then affinely into (-a, a) with a = sqrt(6/(N+2)).
BinaryHead derive_head(std::uint64_t key, std::size_t n_classes);

/// Base model with the keyed binary head appended. Holds a reference to the
/// base model; never copies or mutates its weights. The composite output is
/// head.weights^T * (N raw logits).
class CompositeModel {
public:
    CompositeModel(const Model& base, BinaryHead head);

    const Model& base() const { return *base_; }
    const BinaryHead& head() const { return head_; }

    std::array<float, 2> binary_logits(const Tensor& input) const;
    std::array<float, 2> binary_logits_from_base(const Tensor& base_logits) const;

    /// Forward trace of the base model, reusable for backward_to_input.
    ForwardTrace trace(const Tensor& input) const { return forward_trace(*base_, input); }

    /// Gradient of sum(grad_on_binary * binary_logits) with respect to the
    /// composite input, via the base model's reverse pass.
    Tensor backward_to_input(const ForwardTrace& trace, const std::array<float, 2>& grad_on_binary) const;

    std::size_t binary_top1(const Tensor& input) const;

private:
    const Model* base_;
    BinaryHead head_;
};

/// Binary Top-1 with ties broken to class 0.
std::size_t binary_top1(const std::array<float, 2>& logits);

} // namespace fmk

#endif
