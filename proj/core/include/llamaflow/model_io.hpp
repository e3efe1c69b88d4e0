#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace llamaflow {

// sentencepiece sentinel ids used by the llama2.c tokenizer export
inline constexpr int kBosTokenId = 1;
inline constexpr int kEosTokenId = 2;

// Hyperparameters decoded from the checkpoint header: seven little-endian
// int32 fields (dim, hidden_dim, n_layers, n_heads, n_kv_heads, vocab_size,
// seq_len). A negative vocab_size on disk means the classifier does not
// share the token embedding table.
struct ModelConfig {
    int dim = 0;
    int hidden_dim = 0;
    int n_layers = 0;
    int n_heads = 0;
    int n_kv_heads = 0;
    int vocab_size = 0;
    int seq_len = 0;
    bool shared_classifier = true;

    int head_size() const { return dim / n_heads; }
    int kv_dim() const { return n_kv_heads * head_size(); }

    // throws std::runtime_error naming the offending field
    void validate() const;

    // number of float32 values the checkpoint body must carry, including
    // the legacy rotary tables and the unshared classifier if present
    std::size_t checkpoint_float_count() const;
};

struct Model;
Model load_checkpoint(const std::string& path);

// Weight tensors in llama2.c "version 0" order, each stored contiguously.
// Per-layer matrices are concatenated along the layer axis; the accessors
// below hand out row-major views for one layer.
class ModelWeights {
public:
    std::span<const float> token_embedding() const { return token_embedding_; }
    std::span<const float> token_embedding_row(int token) const;
    std::span<const float> rms_att_weight(int layer) const;
    std::span<const float> rms_ffn_weight(int layer) const;
    std::span<const float> wq(int layer) const;
    std::span<const float> wk(int layer) const;
    std::span<const float> wv(int layer) const;
    std::span<const float> wo(int layer) const;
    std::span<const float> w1(int layer) const;
    std::span<const float> w2(int layer) const;
    std::span<const float> w3(int layer) const;
    std::span<const float> rms_final_weight() const { return rms_final_; }
    std::span<const float> classifier() const;

    // total float32 values held (classifier excluded when shared)
    std::size_t loaded_float_count() const;

private:
    friend Model load_checkpoint(const std::string& path);

    ModelConfig cfg_;
    std::vector<float> token_embedding_;  // vocab_size x dim
    std::vector<float> rms_att_;          // n_layers x dim
    std::vector<float> wq_;               // n_layers x dim x dim
    std::vector<float> wk_;               // n_layers x kv_dim x dim
    std::vector<float> wv_;               // n_layers x kv_dim x dim
    std::vector<float> wo_;               // n_layers x dim x dim
    std::vector<float> rms_ffn_;          // n_layers x dim
    std::vector<float> w1_;               // n_layers x hidden_dim x dim
    std::vector<float> w2_;               // n_layers x dim x hidden_dim
    std::vector<float> w3_;               // n_layers x hidden_dim x dim
    std::vector<float> rms_final_;        // dim
    std::vector<float> classifier_;       // vocab_size x dim, empty when shared
};

struct Model {
    ModelConfig config;
    ModelWeights weights;
};

// Score-ranked BPE vocabulary with byte-fallback pieces.
struct Tokenizer {
    std::vector<std::string> pieces;
    std::vector<float> scores;
    int max_token_length = 0;
    std::array<std::string, 256> byte_pieces;

    // piece text -> lowest token id carrying it
    std::unordered_map<std::string, int> lookup;

    int piece_id(std::string_view text) const;  // -1 when absent
};

// load_checkpoint (declared above ModelWeights) reads header + float32
// tensors; legacy rotary tables are consumed and discarded. Throws
// std::runtime_error naming the first incomplete tensor on truncation.

Tokenizer load_tokenizer(const std::string& path, int vocab_size);

// Greedy score-based BPE merge with dummy-prefix-space handling and byte
// fallback (unknown byte -> id byte+3). Total: never fails.
std::vector<int> encode(const Tokenizer& t, std::string_view text,
                        bool add_bos, bool add_eos);

// Piece text for `token`, with the leading space stripped after BOS and
// <0xXX> byte markers resolved to the raw byte. Throws on out-of-range ids.
std::string decode_piece(const Tokenizer& t, int prev_token, int token);

}  // namespace llamaflow
