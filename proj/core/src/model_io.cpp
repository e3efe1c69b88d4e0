#include "llamaflow/model_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace llamaflow {

namespace {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) fail(std::string("config field ") + name + " must be positive, got " + std::to_string(v));
    };
    positive(dim, "dim");
    positive(hidden_dim, "hidden_dim");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(n_kv_heads, "n_kv_heads");
    positive(vocab_size, "vocab_size");
    positive(seq_len, "seq_len");
    if (dim % n_heads != 0)
        fail("config: dim (" + std::to_string(dim) + ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (n_heads % n_kv_heads != 0)
        fail("config: n_kv_heads (" + std::to_string(n_kv_heads) + ") does not divide n_heads (" + std::to_string(n_heads) + ")");
}

std::size_t ModelConfig::checkpoint_float_count() const {
    const std::size_t d = dim, h = hidden_dim, l = n_layers, v = vocab_size;
    const std::size_t kv = kv_dim();
    std::size_t n = v * d;                      // token embedding
    n += l * d;                                 // rms_att
    n += l * d * d;                             // wq
    n += 2 * l * kv * d;                        // wk, wv
    n += l * d * d;                             // wo
    n += l * d;                                 // rms_ffn
    n += 3 * l * h * d;                         // w1, w2, w3
    n += d;                                     // rms_final
    n += std::size_t(seq_len) * head_size();    // legacy rotary tables
    if (!shared_classifier) n += v * d;
    return n;
}

namespace {

std::span<const float> layer_slice(const std::vector<float>& v, int layer, std::size_t per_layer) {
    return {v.data() + layer * per_layer, per_layer};
}

}  // namespace

std::span<const float> ModelWeights::token_embedding_row(int token) const {
    return {token_embedding_.data() + std::size_t(token) * cfg_.dim, std::size_t(cfg_.dim)};
}
std::span<const float> ModelWeights::rms_att_weight(int layer) const {
    return layer_slice(rms_att_, layer, cfg_.dim);
}
std::span<const float> ModelWeights::rms_ffn_weight(int layer) const {
    return layer_slice(rms_ffn_, layer, cfg_.dim);
}
std::span<const float> ModelWeights::wq(int layer) const {
    return layer_slice(wq_, layer, std::size_t(cfg_.dim) * cfg_.dim);
}
std::span<const float> ModelWeights::wk(int layer) const {
    return layer_slice(wk_, layer, std::size_t(cfg_.kv_dim()) * cfg_.dim);
}
std::span<const float> ModelWeights::wv(int layer) const {
    return layer_slice(wv_, layer, std::size_t(cfg_.kv_dim()) * cfg_.dim);
}
std::span<const float> ModelWeights::wo(int layer) const {
    return layer_slice(wo_, layer, std::size_t(cfg_.dim) * cfg_.dim);
}
std::span<const float> ModelWeights::w1(int layer) const {
    return layer_slice(w1_, layer, std::size_t(cfg_.hidden_dim) * cfg_.dim);
}
std::span<const float> ModelWeights::w2(int layer) const {
    return layer_slice(w2_, layer, std::size_t(cfg_.dim) * cfg_.hidden_dim);
}
std::span<const float> ModelWeights::w3(int layer) const {
    return layer_slice(w3_, layer, std::size_t(cfg_.hidden_dim) * cfg_.dim);
}
std::span<const float> ModelWeights::classifier() const {
    return cfg_.shared_classifier ? std::span<const float>(token_embedding_)
                                  : std::span<const float>(classifier_);
}

std::size_t ModelWeights::loaded_float_count() const {
    return token_embedding_.size() + rms_att_.size() + wq_.size() + wk_.size() +
           wv_.size() + wo_.size() + rms_ffn_.size() + w1_.size() + w2_.size() +
           w3_.size() + rms_final_.size() + classifier_.size();
}

// Sequential tensor reader that knows how many bytes remain, so truncation
// errors can name the tensor that came up short.
struct CheckpointReader {
    std::ifstream file;
    std::string path;

    void read_tensor(std::vector<float>& dst, std::size_t count, const char* name) {
        dst.resize(count);
        file.read(reinterpret_cast<char*>(dst.data()),
                  std::streamsize(count * sizeof(float)));
        if (!file)
            fail(path + ": truncated while reading tensor '" + name + "' (" +
                 std::to_string(count) + " floats expected)");
    }
};

Model load_checkpoint(const std::string& path) {
    CheckpointReader r;
    r.path = path;
    r.file.open(path, std::ios::binary);
    if (!r.file) fail(path + ": cannot open checkpoint file");

    int32_t header[7];
    r.file.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!r.file) fail(path + ": file shorter than the 28-byte header");

    ModelConfig cfg;
    cfg.dim = header[0];
    cfg.hidden_dim = header[1];
    cfg.n_layers = header[2];
    cfg.n_heads = header[3];
    cfg.n_kv_heads = header[4];
    cfg.vocab_size = header[5];
    cfg.seq_len = header[6];
    // llama2.c convention: negative vocab_size marks an unshared classifier
    cfg.shared_classifier = cfg.vocab_size > 0;
    cfg.vocab_size = std::abs(cfg.vocab_size);
    cfg.validate();

    ModelWeights w;
    w.cfg_ = cfg;
    const std::size_t d = cfg.dim, h = cfg.hidden_dim, l = cfg.n_layers,
                      v = cfg.vocab_size, kv = cfg.kv_dim();

    r.read_tensor(w.token_embedding_, v * d, "token_embedding");
    r.read_tensor(w.rms_att_, l * d, "rms_att_weight");
    r.read_tensor(w.wq_, l * d * d, "wq");
    r.read_tensor(w.wk_, l * kv * d, "wk");
    r.read_tensor(w.wv_, l * kv * d, "wv");
    r.read_tensor(w.wo_, l * d * d, "wo");
    r.read_tensor(w.rms_ffn_, l * d, "rms_ffn_weight");
    r.read_tensor(w.w1_, l * h * d, "w1");
    r.read_tensor(w.w2_, l * d * h, "w2");
    r.read_tensor(w.w3_, l * h * d, "w3");
    r.read_tensor(w.rms_final_, d, "rms_final_weight");

    // legacy freq_cis_real/freq_cis_imag tables; rotation factors are
    // recomputed analytically at run time
    {
        std::vector<float> legacy;
        r.read_tensor(legacy, std::size_t(cfg.seq_len) * cfg.head_size(), "legacy_rope_tables");
    }

    if (!cfg.shared_classifier)
        r.read_tensor(w.classifier_, v * d, "classifier");

    if (r.file.peek() != std::char_traits<char>::eof())
        fail(path + ": trailing bytes after the last expected tensor (byte length mismatch vs config)");

    for (const auto* t : {&w.token_embedding_, &w.rms_att_, &w.wq_, &w.wk_, &w.wv_,
                          &w.wo_, &w.rms_ffn_, &w.w1_, &w.w2_, &w.w3_,
                          &w.rms_final_, &w.classifier_}) {
        for (float f : *t)
            if (!std::isfinite(f)) fail(path + ": non-finite value in weights");
    }

    return Model{cfg, std::move(w)};
}

int Tokenizer::piece_id(std::string_view text) const {
    auto it = lookup.find(std::string(text));
    return it == lookup.end() ? -1 : it->second;
}

Tokenizer load_tokenizer(const std::string& path, int vocab_size) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(path + ": cannot open tokenizer file");

    Tokenizer t;
    int32_t max_len = 0;
    f.read(reinterpret_cast<char*>(&max_len), sizeof(max_len));
    if (!f) fail(path + ": truncated before max_token_length");
    t.max_token_length = max_len;

    t.pieces.reserve(vocab_size);
    t.scores.reserve(vocab_size);
    for (int i = 0; i < vocab_size; ++i) {
        float score = 0.0f;
        int32_t len = 0;
        f.read(reinterpret_cast<char*>(&score), sizeof(score));
        f.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (!f) fail(path + ": truncated at token record " + std::to_string(i));
        if (len < 0 || len > max_len)
            fail(path + ": token " + std::to_string(i) + " length " +
                 std::to_string(len) + " exceeds max_token_length " +
                 std::to_string(max_len));
        std::string piece(len, '\0');
        f.read(piece.data(), len);
        if (!f) fail(path + ": truncated inside token " + std::to_string(i));
        t.lookup.try_emplace(piece, i);  // lowest id wins on duplicates
        t.pieces.push_back(std::move(piece));
        t.scores.push_back(score);
    }

    for (int b = 0; b < 256; ++b) t.byte_pieces[b] = std::string(1, char(b));
    return t;
}

std::vector<int> encode(const Tokenizer& t, std::string_view text,
                        bool add_bos, bool add_eos) {
    std::vector<int> tokens;
    if (add_bos) tokens.push_back(kBosTokenId);

    // the reference tokenizer prepends a dummy prefix space to non-empty text
    if (!text.empty()) {
        int sp = t.piece_id(" ");
        if (sp >= 0) tokens.push_back(sp);
    }

    // initial pass: one token per UTF-8 codepoint, bytes as fallback
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = i + 1;
        while (j < text.size() && (text[j] & 0xC0) == 0x80 && j - i < 4) ++j;
        std::string_view chunk = text.substr(i, j - i);
        int id = t.piece_id(chunk);
        if (id >= 0) {
            tokens.push_back(id);
        } else {
            for (char c : chunk) tokens.push_back(int(static_cast<unsigned char>(c)) + 3);
        }
        i = j;
    }

    // merge the best-scoring adjacent pair until none remains
    while (true) {
        float best_score = -1e10f;
        int best_id = -1;
        std::size_t best_idx = SIZE_MAX;
        for (std::size_t k = 0; k + 1 < tokens.size(); ++k) {
            std::string merged = t.pieces[tokens[k]] + t.pieces[tokens[k + 1]];
            int id = t.piece_id(merged);
            if (id >= 0 && t.scores[id] > best_score) {
                best_score = t.scores[id];
                best_id = id;
                best_idx = k;
            }
        }
        if (best_idx == SIZE_MAX) break;
        tokens[best_idx] = best_id;
        tokens.erase(tokens.begin() + best_idx + 1);
    }

    if (add_eos) tokens.push_back(kEosTokenId);
    return tokens;
}

std::string decode_piece(const Tokenizer& t, int prev_token, int token) {
    if (token < 0 || std::size_t(token) >= t.pieces.size())
        fail("decode_piece: token id " + std::to_string(token) + " out of range");
    std::string piece = t.pieces[token];
    // the sentencepiece decoder strips one leading space right after BOS
    if (prev_token == kBosTokenId && !piece.empty() && piece[0] == ' ')
        piece.erase(piece.begin());
    unsigned int byte_val = 0;
    if (piece.size() == 6 &&
        std::sscanf(piece.c_str(), "<0x%02X>", &byte_val) == 1)
        return t.byte_pieces[byte_val & 0xFF];
    return piece;
}

}  // namespace llamaflow
