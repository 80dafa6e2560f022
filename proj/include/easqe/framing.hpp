// Sentinel/segment framing of sentences for the two tagging stages.
//
// Stage one:  [CLS] w_1 ... w_m [SEP]                       all segment 0
// Stage two:  [CLS] w_1 ... w_m [SEP] w_u ... w_v-1 [SEP]   trigger copy and
//             the final [SEP] carry segment 1
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "easqe/core.hpp"
#include "easqe/errors.hpp"

namespace easqe {

enum class PieceKind { Cls, Sep, Token };

struct Piece {
  PieceKind kind = PieceKind::Token;
  int segment = 0;
  std::string text;  // empty for sentinels
};

struct FramedInput {
  std::vector<Piece> pieces;
  std::vector<std::size_t> raw_map;  // raw token index -> framed position
  std::size_t trigger_begin = 0;     // framed range of the trigger copy,
  std::size_t trigger_end = 0;       // [begin, end); empty for stage one
  std::string key;                   // external-embedding record key

  std::size_t size() const { return pieces.size(); }
  bool has_trigger() const { return trigger_end > trigger_begin; }
};

inline FramedInput frame_stage1(const Sentence& s,
                                std::size_t max_len = kMaxFramedLen) {
  std::size_t framed = s.size() + 2;
  if (framed > max_len)
    throw TooLongError("framed length " + std::to_string(framed) +
                       " exceeds cap " + std::to_string(max_len) +
                       " for sentence '" + s.id + "'");
  FramedInput f;
  f.pieces.reserve(framed);
  f.pieces.push_back({PieceKind::Cls, 0, ""});
  f.raw_map.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    f.raw_map.push_back(f.pieces.size());
    f.pieces.push_back({PieceKind::Token, 0, s.tokens[i]});
  }
  f.pieces.push_back({PieceKind::Sep, 0, ""});
  f.key = s.id + "/s1";
  return f;
}

inline FramedInput frame_stage2(const Sentence& s, const Span& trigger,
                                std::size_t max_len = kMaxFramedLen) {
  if (!(trigger.start < trigger.end && trigger.end <= s.size()))
    throw SpanOutOfBoundsError("trigger " + std::to_string(trigger.start) +
                               ".." + std::to_string(trigger.end) +
                               " outside sentence '" + s.id + "' of length " +
                               std::to_string(s.size()));
  std::size_t trigger_len = trigger.end - trigger.start;
  std::size_t framed = s.size() + trigger_len + 3;
  if (framed > max_len)
    throw TooLongError("framed length " + std::to_string(framed) +
                       " exceeds cap " + std::to_string(max_len) +
                       " for sentence '" + s.id + "'");
  FramedInput f;
  f.pieces.reserve(framed);
  f.pieces.push_back({PieceKind::Cls, 0, ""});
  f.raw_map.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    f.raw_map.push_back(f.pieces.size());
    f.pieces.push_back({PieceKind::Token, 0, s.tokens[i]});
  }
  f.pieces.push_back({PieceKind::Sep, 0, ""});
  f.trigger_begin = f.pieces.size();
  for (std::size_t i = trigger.start; i < trigger.end; ++i)
    f.pieces.push_back({PieceKind::Token, 1, s.tokens[i]});
  f.trigger_end = f.pieces.size();
  f.pieces.push_back({PieceKind::Sep, 1, ""});
  f.key = s.id + "/s2/" + std::to_string(trigger.start) + "-" +
          std::to_string(trigger.end);
  return f;
}

}  // namespace easqe
