#pragma once

// Minimal deterministic decoder-only transformer.
//
// Architecture: learned token + position embeddings, n_layers pre-norm blocks
// (parameter-free LayerNorm -> causal multi-head attention -> residual,
// LayerNorm -> GELU MLP -> residual), a final LayerNorm and an output head tied
// to the token embedding. Linear weights are (out_features x in_features) and
// are applied as y = x W^T, so a weight row is an output neuron.
//
// Activation sites follow "layer.<i>.<attn|mlp>.<sublayer>":
//   attn: in (normed block input), q, k, v, ctx (concatenated heads), out
//   mlp:  in (normed input), pre (fc1 output), act (post-GELU), out

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "container.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace prunebench {

using TokenId = std::int32_t;

struct ModelSpec {
    std::size_t n_layers = 0;
    std::size_t d_model = 0;
    std::size_t n_heads = 0;
    std::size_t d_ff = 0;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 0;

    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1) {
            throw error(errc::invalid_argument, "model spec: all counts must be >= 1");
        }
        if (max_seq_len < 8) throw error(errc::invalid_argument, "model spec: max_seq_len must be >= 8");
        if (d_model % n_heads != 0) {
            throw error(errc::invalid_argument, "model spec: d_model (" + std::to_string(d_model) +
                                                    ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        }
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
    j = {{"n_layers", s.n_layers}, {"d_model", s.d_model},       {"n_heads", s.n_heads},
         {"d_ff", s.d_ff},         {"vocab_size", s.vocab_size}, {"max_seq_len", s.max_seq_len}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
    j.at("n_layers").get_to(s.n_layers);
    j.at("d_model").get_to(s.d_model);
    j.at("n_heads").get_to(s.n_heads);
    j.at("d_ff").get_to(s.d_ff);
    j.at("vocab_size").get_to(s.vocab_size);
    j.at("max_seq_len").get_to(s.max_seq_len);
}

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer

struct Tokenized {
    std::vector<TokenId> ids;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // [begin, end) byte offsets
    std::vector<std::string> words;                           // lowercased surface form

    std::size_t size() const noexcept { return ids.size(); }
};

class Vocabulary {
public:
    static constexpr TokenId unk_id = 0;
    static constexpr TokenId bos_id = 1;
    static constexpr std::string_view unk_token = "<unk>";
    static constexpr std::string_view bos_token = "<bos>";

    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        if (tokens_.size() < 2 || tokens_[0] != unk_token || tokens_[1] != bos_token) {
            throw error(errc::invalid_argument, "vocabulary must start with <unk> and <bos>");
        }
        index_.reserve(tokens_.size());
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].empty()) throw error(errc::invalid_argument, "vocabulary: empty token at id " + std::to_string(i));
            if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
                throw error(errc::invalid_argument, "vocabulary: duplicate token '" + tokens_[i] + "'");
            }
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    TokenId lookup(std::string_view word) const {
        auto it = index_.find(std::string(word));
        return it == index_.end() ? unk_id : it->second;
    }

    const std::string& render(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw error(errc::invalid_argument, "token id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    // Lowercased word-level segmentation: whitespace separates, runs of
    // alphanumerics (and UTF-8 continuation bytes) form a word, every other
    // character is a token of its own.
    Tokenized tokenize(std::string_view text,
                       std::size_t max_len = std::numeric_limits<std::size_t>::max()) const {
        Tokenized out;
        auto is_word = [](unsigned char c) { return std::isalnum(c) || c >= 0x80; };
        std::size_t i = 0;
        while (i < text.size() && out.ids.size() < max_len) {
            const auto c = static_cast<unsigned char>(text[i]);
            if (std::isspace(c)) {
                ++i;
                continue;
            }
            std::size_t j = i + 1;
            if (is_word(c)) {
                while (j < text.size() && is_word(static_cast<unsigned char>(text[j]))) ++j;
            }
            std::string word(text.substr(i, j - i));
            for (auto& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            out.ids.push_back(lookup(word));
            out.spans.emplace_back(i, j);
            out.words.push_back(std::move(word));
            i = j;
        }
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error(errc::io, "cannot open vocabulary '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error(errc::io, "cannot write vocabulary '" + path + "'");
    for (const auto& t : vocab.tokens()) out << t << '\n';
}

// ---------------------------------------------------------------------------
// Tensor naming

inline const std::vector<std::string>& linear_kinds() {
    static const std::vector<std::string> kinds = {"attn.q_proj", "attn.k_proj", "attn.v_proj",
                                                   "attn.o_proj", "mlp.fc1",     "mlp.fc2"};
    return kinds;
}

inline std::string linear_layer_name(std::size_t layer, std::string_view kind) {
    return "layer." + std::to_string(layer) + "." + std::string(kind);
}

inline std::string weight_name(std::string_view linear_layer) { return std::string(linear_layer) + ".weight"; }

// Prunable linear layers in canonical order.
inline std::vector<std::string> prunable_layers(const ModelSpec& spec) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < spec.n_layers; ++i)
        for (const auto& k : linear_kinds()) out.push_back(linear_layer_name(i, k));
    return out;
}

struct TensorShape {
    std::size_t rows;
    std::size_t cols;
};

// Every tensor of a bundle with its required shape, in canonical file order.
inline std::vector<std::pair<std::string, TensorShape>> required_tensors(const ModelSpec& spec) {
    std::vector<std::pair<std::string, TensorShape>> out;
    out.emplace_back("tok_embed.weight", TensorShape{spec.vocab_size, spec.d_model});
    out.emplace_back("pos_embed.weight", TensorShape{spec.max_seq_len, spec.d_model});
    for (std::size_t i = 0; i < spec.n_layers; ++i) {
        for (const auto& k : linear_kinds()) {
            TensorShape shape{spec.d_model, spec.d_model};
            if (k == "mlp.fc1") shape = {spec.d_ff, spec.d_model};
            if (k == "mlp.fc2") shape = {spec.d_model, spec.d_ff};
            out.emplace_back(weight_name(linear_layer_name(i, k)), shape);
        }
    }
    return out;
}

inline const std::vector<std::string>& attn_sublayers() {
    static const std::vector<std::string> s = {"in", "q", "k", "v", "ctx", "out"};
    return s;
}

inline const std::vector<std::string>& mlp_sublayers() {
    static const std::vector<std::string> s = {"in", "pre", "act", "out"};
    return s;
}

inline std::vector<std::string> activation_sites(const ModelSpec& spec) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < spec.n_layers; ++i) {
        for (const auto& s : attn_sublayers()) out.push_back("layer." + std::to_string(i) + ".attn." + s);
        for (const auto& s : mlp_sublayers()) out.push_back("layer." + std::to_string(i) + ".mlp." + s);
    }
    return out;
}

inline bool is_valid_site(const ModelSpec& spec, std::string_view site) {
    for (const auto& s : activation_sites(spec))
        if (s == site) return true;
    return false;
}

// Site whose values are the exact input of a given linear layer.
inline std::string input_site_of(std::string_view linear_layer) {
    const auto dot = linear_layer.find('.', 6);  // after "layer."
    const std::string prefix(linear_layer.substr(0, dot));
    const std::string kind(linear_layer.substr(dot + 1));
    if (kind == "attn.q_proj" || kind == "attn.k_proj" || kind == "attn.v_proj") return prefix + ".attn.in";
    if (kind == "attn.o_proj") return prefix + ".attn.ctx";
    if (kind == "mlp.fc1") return prefix + ".mlp.in";
    if (kind == "mlp.fc2") return prefix + ".mlp.act";
    throw error(errc::invalid_argument, "not a linear layer: '" + std::string(linear_layer) + "'");
}

// ---------------------------------------------------------------------------
// Bundle

struct ModelBundle {
    ModelSpec spec;
    std::map<std::string, std::shared_ptr<const Matrix>> tensors;
    std::shared_ptr<const Vocabulary> vocab;

    const Matrix& tensor(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw error(errc::unknown_tensor, "no tensor named '" + name + "'");
        return *it->second;
    }

    const Vocabulary& vocabulary() const { return *vocab; }
};

inline Matrix round_to_f32(Matrix m) {
    for (auto& v : m.values()) v = static_cast<double>(static_cast<float>(v));
    return m;
}

inline void validate_bundle(const ModelBundle& b) {
    b.spec.validate();
    if (!b.vocab) throw error(errc::invalid_argument, "bundle has no vocabulary");
    if (b.vocab->size() != b.spec.vocab_size) {
        throw error(errc::shape_mismatch, "vocabulary holds " + std::to_string(b.vocab->size()) +
                                              " tokens but spec declares " + std::to_string(b.spec.vocab_size));
    }
    const auto required = required_tensors(b.spec);
    for (const auto& [name, shape] : required) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end()) throw error(errc::missing_tensor, "missing tensor '" + name + "'");
        if (it->second->rows() != shape.rows || it->second->cols() != shape.cols) {
            throw error(errc::shape_mismatch, "tensor '" + name + "' has shape " + it->second->shape_string() +
                                                  ", expected " + std::to_string(shape.rows) + "x" +
                                                  std::to_string(shape.cols));
        }
        if (!it->second->all_finite()) throw error(errc::invalid_argument, "tensor '" + name + "' has non-finite values");
    }
    if (b.tensors.size() != required.size()) {
        for (const auto& [name, _] : b.tensors) {
            bool known = false;
            for (const auto& r : required) known = known || r.first == name;
            if (!known) throw error(errc::unknown_tensor, "unknown tensor '" + name + "'");
        }
    }
}

inline constexpr std::string_view pbw_magic = "PBWEIGHT";

inline std::vector<std::uint8_t> serialize_bundle(const ModelBundle& b) {
    validate_bundle(b);
    nlohmann::json header;
    header["format"] = "pbw";
    header["version"] = 1;
    header["spec"] = b.spec;
    header["vocab"] = b.vocab->tokens();
    auto descs = nlohmann::json::array();
    ByteWriter payload;
    std::size_t offset = 0;
    for (const auto& [name, shape] : required_tensors(b.spec)) {
        descs.push_back({{"name", name}, {"rows", shape.rows}, {"cols", shape.cols}, {"offset", offset}});
        for (double v : b.tensor(name).values()) payload.f32(static_cast<float>(v));
        offset += shape.rows * shape.cols * 4;
    }
    header["tensors"] = descs;
    return encode_framed(pbw_magic, header, payload.bytes());
}

inline void save_bundle(const ModelBundle& b, const std::string& path) { write_file_bytes(path, serialize_bundle(b)); }

inline ModelBundle parse_bundle(std::span<const std::uint8_t> bytes, const std::string& what = "weights") {
    auto framed = decode_framed(
        bytes, pbw_magic,
        [](const nlohmann::json& h) {
            std::size_t total = 0;
            for (const auto& t : h.at("tensors"))
                total += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>() * 4;
            return total;
        },
        what);
    ModelBundle b;
    try {
        b.spec = framed.header.at("spec").get<ModelSpec>();
        b.vocab = std::make_shared<const Vocabulary>(framed.header.at("vocab").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::bad_header, what + ": malformed header: " + e.what());
    }
    b.spec.validate();

    const auto required = required_tensors(b.spec);
    ByteReader r(framed.payload);
    std::size_t offset = 0;
    for (const auto& t : framed.header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto rows = t.at("rows").get<std::size_t>();
        const auto cols = t.at("cols").get<std::size_t>();
        if (t.at("offset").get<std::size_t>() != offset) {
            throw error(errc::bad_header, what + ": tensor '" + name + "' offset is not contiguous");
        }
        auto req = std::find_if(required.begin(), required.end(), [&](const auto& p) { return p.first == name; });
        if (req == required.end()) throw error(errc::unknown_tensor, what + ": unknown tensor '" + name + "'");
        if (req->second.rows != rows || req->second.cols != cols) {
            throw error(errc::shape_mismatch, what + ": tensor '" + name + "' declared " + std::to_string(rows) + "x" +
                                                  std::to_string(cols) + ", spec requires " +
                                                  std::to_string(req->second.rows) + "x" +
                                                  std::to_string(req->second.cols));
        }
        Matrix m(rows, cols);
        for (auto& v : m.values()) v = static_cast<double>(r.f32());
        if (!b.tensors.emplace(name, std::make_shared<const Matrix>(std::move(m))).second) {
            throw error(errc::bad_header, what + ": duplicate tensor '" + name + "'");
        }
        offset += rows * cols * 4;
    }
    validate_bundle(b);
    return b;
}

inline ModelBundle load_bundle(const std::string& path) { return parse_bundle(read_file_bytes(path), path); }

// Loose named tensors in the .pbw layout (no spec or vocabulary), e.g. for
// dumping saliency matrices.
inline void save_tensors(const std::map<std::string, Matrix>& tensors, const std::string& path) {
    nlohmann::json header = {{"format", "pbw-tensors"}, {"version", 1}};
    auto descs = nlohmann::json::array();
    ByteWriter payload;
    std::size_t offset = 0;
    for (const auto& [name, m] : tensors) {
        descs.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
        for (double v : m.values()) payload.f32(static_cast<float>(v));
        offset += m.size() * 4;
    }
    header["tensors"] = descs;
    write_file_bytes(path, encode_framed(pbw_magic, header, payload.bytes()));
}

inline std::map<std::string, Matrix> load_tensors(const std::string& path) {
    auto framed = decode_framed(
        read_file_bytes(path), pbw_magic,
        [](const nlohmann::json& h) {
            std::size_t total = 0;
            for (const auto& t : h.at("tensors"))
                total += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>() * 4;
            return total;
        },
        path);
    std::map<std::string, Matrix> out;
    ByteReader r(framed.payload);
    for (const auto& t : framed.header.at("tensors")) {
        Matrix m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
        for (auto& v : m.values()) v = static_cast<double>(r.f32());
        out.emplace(t.at("name").get<std::string>(), std::move(m));
    }
    return out;
}

inline std::string bundle_fingerprint(const ModelBundle& b) { return sha256_hex(serialize_bundle(b)); }

// New bundle with some weights replaced. Replacements are rounded to f32 so the
// in-memory bundle equals what save_bundle writes; untouched tensors are shared.
inline ModelBundle apply_weights(const ModelBundle& b, const std::map<std::string, Matrix>& replacements) {
    ModelBundle out = b;
    for (const auto& [name, m] : replacements) {
        auto it = out.tensors.find(name);
        if (it == out.tensors.end()) throw error(errc::unknown_tensor, "apply_weights: unknown tensor '" + name + "'");
        if (it->second->rows() != m.rows() || it->second->cols() != m.cols()) {
            throw error(errc::shape_mismatch, "apply_weights: tensor '" + name + "' is " + it->second->shape_string() +
                                                  ", replacement is " + m.shape_string());
        }
        if (!m.all_finite()) throw error(errc::invalid_argument, "apply_weights: non-finite values for '" + name + "'");
        it->second = std::make_shared<const Matrix>(round_to_f32(m));
    }
    return out;
}

// Bundle with N(0, std^2) weights: embeddings use embed_std, linear layers use
// gain / sqrt(fan_in). Values are f32-representable.
inline ModelBundle random_bundle(const ModelSpec& spec, std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed,
                                 double embed_std = 1.0, double gain = 1.0) {
    spec.validate();
    ModelBundle b;
    b.spec = spec;
    b.vocab = std::move(vocab);
    Rng rng = Rng::substream(seed, "weights");
    for (const auto& [name, shape] : required_tensors(spec)) {
        const bool embed = name.find("embed") != std::string::npos;
        const double std = embed ? embed_std : gain / std::sqrt(static_cast<double>(shape.cols));
        Matrix m(shape.rows, shape.cols);
        for (auto& v : m.values()) v = static_cast<double>(static_cast<float>(std * rng.normal()));
        b.tensors.emplace(name, std::make_shared<const Matrix>(std::move(m)));
    }
    validate_bundle(b);
    return b;
}

// ---------------------------------------------------------------------------
// Forward pass

struct ActivationTrace {
    std::string site;
    std::vector<TokenId> tokens;
    Matrix values;  // n_tokens x n_neurons
};

struct ForwardResult {
    Matrix logits;
    std::map<std::string, ActivationTrace> traces;
};

namespace detail {

inline constexpr double layer_norm_eps = 1e-5;

inline Matrix layer_norm(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto r = x.row(t);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + layer_norm_eps);
        auto o = out.row(t);
        for (std::size_t j = 0; j < r.size(); ++j) o[j] = (r[j] - mean) * inv;
    }
    return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline Matrix causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads) {
    const std::size_t n = q.rows();
    const std::size_t dh = q.cols() / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix ctx(n, q.cols());
    std::vector<double> w(n);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t t = 0; t < n; ++t) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s <= t; ++s) {
                double dot = 0.0;
                for (std::size_t d = 0; d < dh; ++d) dot += q(t, off + d) * k(s, off + d);
                w[s] = dot * scale;
                mx = std::max(mx, w[s]);
            }
            double z = 0.0;
            for (std::size_t s = 0; s <= t; ++s) {
                w[s] = std::exp(w[s] - mx);
                z += w[s];
            }
            for (std::size_t s = 0; s <= t; ++s) {
                const double p = w[s] / z;
                for (std::size_t d = 0; d < dh; ++d) ctx(t, off + d) += p * v(s, off + d);
            }
        }
    }
    return ctx;
}

inline void add_in_place(Matrix& x, const Matrix& y) {
    auto xv = x.values();
    auto yv = y.values();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += yv[i];
}

// Runs the model, handing every activation site to observe(site, values).
template <typename Observer>
Matrix run(const ModelBundle& b, std::span<const TokenId> tokens, Observer&& observe) {
    const auto& spec = b.spec;
    if (tokens.empty()) throw error(errc::invalid_argument, "forward: empty token sequence");
    if (tokens.size() > spec.max_seq_len) {
        throw error(errc::invalid_argument, "forward: " + std::to_string(tokens.size()) +
                                                " tokens exceed max_seq_len " + std::to_string(spec.max_seq_len));
    }
    const auto& tok = b.tensor("tok_embed.weight");
    const auto& pos = b.tensor("pos_embed.weight");
    Matrix x(tokens.size(), spec.d_model);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto id = tokens[t];
        if (id < 0 || static_cast<std::size_t>(id) >= spec.vocab_size) {
            throw error(errc::invalid_argument, "forward: token id " + std::to_string(id) + " out of range");
        }
        auto e = tok.row(static_cast<std::size_t>(id));
        auto p = pos.row(t);
        auto r = x.row(t);
        for (std::size_t j = 0; j < spec.d_model; ++j) r[j] = e[j] + p[j];
    }
    for (std::size_t i = 0; i < spec.n_layers; ++i) {
        const std::string pre = "layer." + std::to_string(i) + ".";
        auto w = [&](const char* kind) -> const Matrix& { return b.tensor(pre + kind + ".weight"); };

        Matrix a_in = layer_norm(x);
        observe(pre + "attn.in", a_in);
        Matrix q = matmul_transposed(a_in, w("attn.q_proj"));
        observe(pre + "attn.q", q);
        Matrix k = matmul_transposed(a_in, w("attn.k_proj"));
        observe(pre + "attn.k", k);
        Matrix v = matmul_transposed(a_in, w("attn.v_proj"));
        observe(pre + "attn.v", v);
        Matrix ctx = causal_attention(q, k, v, spec.n_heads);
        observe(pre + "attn.ctx", ctx);
        Matrix a_out = matmul_transposed(ctx, w("attn.o_proj"));
        observe(pre + "attn.out", a_out);
        add_in_place(x, a_out);

        Matrix m_in = layer_norm(x);
        observe(pre + "mlp.in", m_in);
        Matrix h = matmul_transposed(m_in, w("mlp.fc1"));
        observe(pre + "mlp.pre", h);
        for (auto& val : h.values()) val = gelu(val);
        observe(pre + "mlp.act", h);
        Matrix m_out = matmul_transposed(h, w("mlp.fc2"));
        observe(pre + "mlp.out", m_out);
        add_in_place(x, m_out);
    }
    return matmul_transposed(layer_norm(x), tok);
}

}  // namespace detail

inline ForwardResult forward(const ModelBundle& b, std::span<const TokenId> tokens,
                             const std::set<std::string>& capture = {}) {
    for (const auto& site : capture) {
        if (!is_valid_site(b.spec, site)) {
            std::string valid;
            for (const auto& s : activation_sites(b.spec)) valid += (valid.empty() ? "" : ", ") + s;
            throw error(errc::invalid_argument, "unknown activation site '" + site + "'; valid sites: " + valid);
        }
    }
    ForwardResult out;
    out.logits = detail::run(b, tokens, [&](const std::string& site, const Matrix& values) {
        if (capture.count(site)) {
            out.traces[site] = ActivationTrace{site, std::vector<TokenId>(tokens.begin(), tokens.end()), values};
        }
    });
    return out;
}

// Exact pre-multiplication input of every prunable linear layer.
inline std::map<std::string, Matrix> layer_linear_inputs(const ModelBundle& b, std::span<const TokenId> tokens) {
    std::map<std::string, std::vector<std::string>> consumers;
    for (const auto& layer : prunable_layers(b.spec)) consumers[input_site_of(layer)].push_back(layer);
    std::map<std::string, Matrix> out;
    detail::run(b, tokens, [&](const std::string& site, const Matrix& values) {
        auto it = consumers.find(site);
        if (it == consumers.end()) return;
        for (const auto& layer : it->second) out[layer] = values;
    });
    return out;
}

}  // namespace prunebench
