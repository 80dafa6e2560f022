// Per-token hidden features, from either the built-in trainable encoder or a
// file of precomputed contextual embeddings.
//
// The built-in encoder is a linear map over a window of token embeddings plus
// a segment embedding and a mean-pooled trigger vector:
//   h_i = W_proj^T [emb(prev); emb(cur); emb(next); seg(i); pool] + b_proj
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "easqe/errors.hpp"
#include "easqe/framing.hpp"
#include "easqe/matrix.hpp"
#include "easqe/rng.hpp"

namespace easqe {

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  std::unordered_map<std::string, int> index{
      {"[PAD]", kPad}, {"[UNK]", kUnk}, {"[CLS]", kCls}, {"[SEP]", kSep}};

  int size() const { return static_cast<int>(tokens.size()); }

  int add(const std::string& token) {
    auto it = index.find(token);
    if (it != index.end()) return it->second;
    int id = size();
    tokens.push_back(token);
    index.emplace(token, id);
    return id;
  }

  int lookup(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnk : it->second;
  }
};

struct EncoderParams {
  Vocabulary vocab;
  std::size_t embedding_dim = 32;  // d_e
  std::size_t hidden_dim = 64;     // d
  Matrix embeddings;               // vocab x d_e
  Matrix segment_embeddings;       // 2 x d_e
  Matrix proj_w;                   // 5*d_e x d
  std::vector<double> proj_b;      // d

  std::size_t input_dim() const { return 5 * embedding_dim; }
};

inline EncoderParams init_encoder_params(Vocabulary vocab,
                                         std::size_t embedding_dim,
                                         std::size_t hidden_dim, Rng& rng) {
  EncoderParams p;
  p.vocab = std::move(vocab);
  p.embedding_dim = embedding_dim;
  p.hidden_dim = hidden_dim;
  p.embeddings = Matrix(p.vocab.size(), embedding_dim);
  for (double& v : p.embeddings.data) v = rng.uniform(-0.1, 0.1);
  p.segment_embeddings = Matrix(2, embedding_dim);
  for (double& v : p.segment_embeddings.data) v = rng.uniform(-0.1, 0.1);
  p.proj_w = Matrix(p.input_dim(), hidden_dim);
  for (double& v : p.proj_w.data) v = rng.uniform(-0.1, 0.1);
  p.proj_b.assign(hidden_dim, 0.0);
  return p;
}

inline int piece_token_id(const Piece& piece, const Vocabulary& vocab) {
  switch (piece.kind) {
    case PieceKind::Cls: return Vocabulary::kCls;
    case PieceKind::Sep: return Vocabulary::kSep;
    case PieceKind::Token: return vocab.lookup(piece.text);
  }
  return Vocabulary::kUnk;
}

inline std::vector<int> framed_token_ids(const FramedInput& f,
                                         const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(f.size());
  for (const Piece& piece : f.pieces) ids.push_back(piece_token_id(piece, vocab));
  return ids;
}

// Mean embedding over the trigger copy; zero when there is no trigger.
inline std::vector<double> trigger_pool(const FramedInput& f,
                                        const std::vector<int>& ids,
                                        const EncoderParams& p) {
  std::vector<double> pool(p.embedding_dim, 0.0);
  if (!f.has_trigger()) return pool;
  std::size_t count = f.trigger_end - f.trigger_begin;
  for (std::size_t pos = f.trigger_begin; pos < f.trigger_end; ++pos) {
    const double* emb = p.embeddings.row(ids[pos]);
    for (std::size_t j = 0; j < p.embedding_dim; ++j) pool[j] += emb[j];
  }
  for (double& v : pool) v /= static_cast<double>(count);
  return pool;
}

// Concatenated encoder input for one framed position.
inline std::vector<double> encoder_input(const FramedInput& f,
                                         const std::vector<int>& ids,
                                         const std::vector<double>& pool,
                                         std::size_t pos,
                                         const EncoderParams& p) {
  std::size_t d_e = p.embedding_dim;
  std::vector<double> x(p.input_dim());
  int prev = pos == 0 ? Vocabulary::kPad : ids[pos - 1];
  int next = pos + 1 == f.size() ? Vocabulary::kPad : ids[pos + 1];
  const double* blocks[3] = {p.embeddings.row(prev), p.embeddings.row(ids[pos]),
                             p.embeddings.row(next)};
  for (int b = 0; b < 3; ++b)
    std::memcpy(x.data() + b * d_e, blocks[b], d_e * sizeof(double));
  std::memcpy(x.data() + 3 * d_e, p.segment_embeddings.row(f.pieces[pos].segment),
              d_e * sizeof(double));
  std::memcpy(x.data() + 4 * d_e, pool.data(), d_e * sizeof(double));
  return x;
}

struct ExternalEmbeddingStore {
  // Ordered so that saving iterates keys deterministically.
  std::map<std::string, Matrix> records;

  const Matrix* find(const std::string& key) const {
    auto it = records.find(key);
    return it == records.end() ? nullptr : &it->second;
  }
};

// Exactly one of the two backends is set.
struct EncoderBackend {
  const EncoderParams* builtin = nullptr;
  const ExternalEmbeddingStore* external = nullptr;
};

inline Matrix encode_builtin(const FramedInput& f, const EncoderParams& p) {
  if (p.embeddings.cols != p.embedding_dim ||
      p.proj_w.rows != p.input_dim() || p.proj_w.cols != p.hidden_dim ||
      p.proj_b.size() != p.hidden_dim)
    throw DimensionMismatchError("inconsistent encoder parameter shapes");
  std::vector<int> ids = framed_token_ids(f, p.vocab);
  std::vector<double> pool = trigger_pool(f, ids, p);
  Matrix h(f.size(), p.hidden_dim);
  for (std::size_t pos = 0; pos < f.size(); ++pos) {
    std::vector<double> x = encoder_input(f, ids, pool, pos, p);
    double* out = h.row(pos);
    for (std::size_t j = 0; j < p.hidden_dim; ++j) out[j] = p.proj_b[j];
    for (std::size_t a = 0; a < x.size(); ++a) {
      double xa = x[a];
      if (xa == 0.0) continue;
      const double* wrow = p.proj_w.row(a);
      for (std::size_t j = 0; j < p.hidden_dim; ++j) out[j] += xa * wrow[j];
    }
  }
  return h;
}

inline Matrix encode(const FramedInput& f, const EncoderBackend& backend) {
  if (backend.external) {
    const Matrix* m = backend.external->find(f.key);
    if (!m)
      throw MissingEmbeddingError("no external embedding for key '" + f.key + "'");
    if (m->rows != f.size())
      throw DimensionMismatchError("embedding for key '" + f.key + "' has " +
                                   std::to_string(m->rows) +
                                   " rows, framed length is " +
                                   std::to_string(f.size()));
    return *m;
  }
  if (!backend.builtin) throw DimensionMismatchError("no encoder backend set");
  return encode_builtin(f, *backend.builtin);
}

// --- external embedding file format -----------------------------------------
//
// 16-byte magic "EASQE-EMB-v1\0\0\0\0", then a UTF-8 JSON index object
// mapping key -> {rows, cols, offset, byte_len} terminated by a newline,
// then a payload of little-endian float32 values in row-major order.
// Offsets are relative to the payload start.

inline constexpr char kEmbeddingMagic[16] = {'E', 'A', 'S', 'Q', 'E', '-',
                                             'E', 'M', 'B', '-', 'v', '1',
                                             '\0', '\0', '\0', '\0'};

namespace detail {

inline void append_f32_le(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                       static_cast<std::uint32_t>(p[1]) << 8 |
                       static_cast<std::uint32_t>(p[2]) << 16 |
                       static_cast<std::uint32_t>(p[3]) << 24;
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline ExternalEmbeddingStore load_external_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string bytes = buffer.str();

  if (bytes.size() < sizeof(kEmbeddingMagic) ||
      std::memcmp(bytes.data(), kEmbeddingMagic, sizeof(kEmbeddingMagic)) != 0)
    throw FormatError("bad magic in embedding file: " + path);
  std::size_t newline = bytes.find('\n', sizeof(kEmbeddingMagic));
  if (newline == std::string::npos)
    throw FormatError("embedding index not newline-terminated: " + path);

  nlohmann::json index = nlohmann::json::parse(
      bytes.begin() + sizeof(kEmbeddingMagic), bytes.begin() + newline,
      nullptr, false);
  if (index.is_discarded() || !index.is_object())
    throw FormatError("embedding index is not a JSON object: " + path);

  const unsigned char* payload =
      reinterpret_cast<const unsigned char*>(bytes.data()) + newline + 1;
  std::size_t payload_size = bytes.size() - newline - 1;

  ExternalEmbeddingStore store;
  for (const auto& [key, entry] : index.items()) {
    if (!entry.is_object() || !entry.contains("rows") || !entry.contains("cols") ||
        !entry.contains("offset") || !entry.contains("byte_len"))
      throw FormatError("malformed index entry for key '" + key + "'");
    std::size_t rows = entry["rows"].get<std::size_t>();
    std::size_t cols = entry["cols"].get<std::size_t>();
    std::size_t offset = entry["offset"].get<std::size_t>();
    std::size_t byte_len = entry["byte_len"].get<std::size_t>();
    if (byte_len != rows * cols * 4)
      throw ShapeError("key '" + key + "': byte_len " + std::to_string(byte_len) +
                       " does not match " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " float32");
    if (offset + byte_len > payload_size)
      throw FormatError("key '" + key + "': payload truncated");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i)
      m.data[i] = static_cast<double>(
          detail::read_f32_le(payload + offset + 4 * i));
    store.records.emplace(key, std::move(m));
  }
  return store;
}

inline void save_external_embeddings(const ExternalEmbeddingStore& store,
                                     const std::string& path) {
  nlohmann::json index = nlohmann::json::object();
  std::string payload;
  for (const auto& [key, m] : store.records) {
    index[key] = {{"rows", m.rows},
                  {"cols", m.cols},
                  {"offset", payload.size()},
                  {"byte_len", m.rows * m.cols * 4}};
    for (double v : m.data)
      detail::append_f32_le(payload, static_cast<float>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  std::string header = index.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing embedding file: " + path);
}

}  // namespace easqe
