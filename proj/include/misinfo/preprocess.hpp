#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "misinfo/error.hpp"

namespace misinfo {

struct CleanConfig {
  bool strip_urls = true;
  bool strip_mentions = true;
  bool strip_emoticons = true;
  bool keep_hashtag_mark = false;
};

/// A token with byte offsets [start, end) into the cleaned text. Segments of
/// one hashtag share the hashtag's span.
struct Token {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

namespace detail {

inline bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

inline bool is_ascii_alnum(unsigned char c) { return c < 0x80 && std::isalnum(c); }

// Inclusive codepoint ranges stripped as emoji.
inline constexpr std::array<std::pair<char32_t, char32_t>, 8> kEmojiRanges{{
    {0x1F300, 0x1F5FF},
    {0x1F600, 0x1F64F},
    {0x1F680, 0x1F6FF},
    {0x1F900, 0x1F9FF},
    {0x2600, 0x26FF},
    {0x2700, 0x27BF},
    {0xFE0F, 0xFE0F},
    {0x200D, 0x200D},
}};

inline bool is_emoji(char32_t cp) {
  for (auto [lo, hi] : kEmojiRanges)
    if (cp >= lo && cp <= hi) return true;
  return false;
}

// Decodes one UTF-8 sequence at s[i]. Returns the byte length; invalid
// sequences decode as a single byte with cp = 0xFFFD.
inline std::size_t decode_utf8(std::string_view s, std::size_t i, char32_t& cp) {
  const auto c0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  if (c0 < 0x80) {
    cp = c0;
    return 1;
  } else if ((c0 & 0xE0) == 0xC0) {
    len = 2;
    cp = c0 & 0x1F;
  } else if ((c0 & 0xF0) == 0xE0) {
    len = 3;
    cp = c0 & 0x0F;
  } else if ((c0 & 0xF8) == 0xF0) {
    len = 4;
    cp = c0 & 0x07;
  } else {
    cp = 0xFFFD;
    return 1;
  }
  if (i + len > s.size()) {
    cp = 0xFFFD;
    return 1;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const auto c = static_cast<unsigned char>(s[i + k]);
    if ((c & 0xC0) != 0x80) {
      cp = 0xFFFD;
      return 1;
    }
    cp = (cp << 6) | (c & 0x3F);
  }
  return len;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

/// Strips URLs, @-mentions and emoji, then collapses whitespace. Every removed
/// substring is replaced by a space so removal never joins its neighbours.
inline std::string clean(std::string_view text, const CleanConfig& cfg = {}) {
  std::string s(text);
  if (cfg.strip_urls) {
    static const std::regex url(R"(https?://\S*)");
    s = std::regex_replace(s, url, " ");
  }
  if (cfg.strip_mentions) {
    static const std::regex mention(R"(@\w+)");
    s = std::regex_replace(s, mention, " ");
  }
  if (cfg.strip_emoticons) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
      char32_t cp = 0;
      const std::size_t len = detail::decode_utf8(s, i, cp);
      if (detail::is_emoji(cp))
        out.push_back(' ');
      else
        out.append(s, i, len);
      i += len;
    }
    s = std::move(out);
  }
  return detail::collapse_whitespace(s);
}

/// Splits a hashtag at camel-case and letter/digit boundaries. A run of
/// capitals is one segment, except that its last capital opens a new segment
/// when a lowercase letter follows ("#HTMLParser" -> html, parser).
/// Non-alphanumeric ASCII bytes act as separators. Bytes >= 0x80 count as
/// lowercase letters.
inline std::vector<std::string> segment_hashtag(std::string_view token, bool keep_hashtag_mark = false) {
  if (token.empty() || token.front() != '#')
    throw Error(ErrorKind::NotAHashtag, "'" + std::string(token) + "' does not start with '#'");

  enum class Cls { Upper, Lower, Digit };
  auto classify = [](unsigned char c) {
    if (c >= 'A' && c <= 'Z') return Cls::Upper;
    if (c >= '0' && c <= '9') return Cls::Digit;
    return Cls::Lower;
  };

  std::vector<std::string> segments;
  std::string cur;
  Cls prev = Cls::Lower;
  bool cur_all_upper = true;
  auto flush = [&] {
    if (!cur.empty()) segments.push_back(detail::ascii_lower(cur));
    cur.clear();
    cur_all_upper = true;
  };

  for (std::size_t i = 1; i < token.size(); ++i) {
    const auto c = static_cast<unsigned char>(token[i]);
    if (c < 0x80 && !std::isalnum(c)) {
      flush();
      continue;
    }
    const Cls cls = classify(c);
    if (!cur.empty()) {
      const bool prev_letter = prev != Cls::Digit;
      const bool letter = cls != Cls::Digit;
      if (prev == Cls::Lower && cls == Cls::Upper) {
        flush();
      } else if (prev_letter != letter) {
        flush();
      } else if (prev == Cls::Upper && cls == Cls::Lower && cur_all_upper && cur.size() >= 2) {
        const char last = cur.back();
        cur.pop_back();
        flush();
        cur.push_back(last);
      }
    }
    cur.push_back(static_cast<char>(c));
    if (cls != Cls::Upper) cur_all_upper = false;
    prev = cls;
  }
  flush();

  if (keep_hashtag_mark && !segments.empty()) segments.front().insert(0, "#");
  return segments;
}

/// Whitespace tokenizer over cleaned text. Edge punctuation becomes one token
/// per character, hashtags expand into their segments (all carrying the
/// hashtag's span), and a trailing possessive "'s" is split off.
inline std::vector<Token> tokenize(std::string_view text, bool keep_hashtag_mark = false) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::size_t end = i;
    while (end < text.size() && !detail::is_space(static_cast<unsigned char>(text[end]))) ++end;

    std::size_t s = i, e = end;
    auto hashtag_at = [&](std::size_t p) {
      return text[p] == '#' && p + 1 < e &&
             (detail::is_ascii_alnum(static_cast<unsigned char>(text[p + 1])) ||
              static_cast<unsigned char>(text[p + 1]) >= 0x80);
    };

    std::vector<Token> trailing;
    while (e > s && detail::is_ascii_punct(static_cast<unsigned char>(text[e - 1]))) {
      trailing.push_back({std::string(1, text[e - 1]), e - 1, e});
      --e;
    }
    while (s < e && detail::is_ascii_punct(static_cast<unsigned char>(text[s])) && !hashtag_at(s)) {
      tokens.push_back({std::string(1, text[s]), s, s + 1});
      ++s;
    }

    if (s < e) {
      const std::string_view core = text.substr(s, e - s);
      std::vector<std::string> segs;
      if (hashtag_at(s)) segs = segment_hashtag(core, keep_hashtag_mark);
      if (!segs.empty()) {
        for (auto& seg : segs) tokens.push_back({std::move(seg), s, e});
      } else {
        std::size_t clitic = 0;
        if (core.size() > 2 && (core.back() == 's' || core.back() == 'S')) {
          if (core[core.size() - 2] == '\'')
            clitic = 2;
          else if (core.size() > 4 && core.substr(core.size() - 4, 3) == "\xE2\x80\x99")
            clitic = 4;
        }
        if (clitic != 0) {
          tokens.push_back({std::string(core.substr(0, core.size() - clitic)), s, e - clitic});
          tokens.push_back({std::string(core.substr(core.size() - clitic)), e - clitic, e});
        } else {
          tokens.push_back({std::string(core), s, e});
        }
      }
    }
    tokens.insert(tokens.end(), trailing.rbegin(), trailing.rend());
    i = end;
  }
  return tokens;
}

namespace detail {

// Porter (1980) suffix stripper over a lowercase ASCII word.
class PorterStemmer {
 public:
  explicit PorterStemmer(std::string word) : b_(std::move(word)) {}

  std::string run() {
    if (b_.size() <= 2) return b_;
    k_ = static_cast<int>(b_.size()) - 1;
    step1ab();
    if (k_ > 0) {
      step1c();
      step2();
      step3();
      step4();
      step5();
    }
    return b_.substr(0, static_cast<std::size_t>(k_ + 1));
  }

 private:
  bool cons(int i) const {
    switch (b_[static_cast<std::size_t>(i)]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 ? true : !cons(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b[0..j].
  int m() const {
    int n = 0, i = 0;
    while (true) {
      if (i > j_) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    while (true) {
      while (true) {
        if (i > j_) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      while (true) {
        if (i > j_) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowel_in_stem() const {
    for (int i = 0; i <= j_; ++i)
      if (!cons(i)) return true;
    return false;
  }

  bool double_c(int i) const {
    return i >= 1 && b_[static_cast<std::size_t>(i)] == b_[static_cast<std::size_t>(i - 1)] && cons(i);
  }

  // consonant-vowel-consonant ending at i, last consonant not w, x or y.
  bool cvc(int i) const {
    if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
    const char c = b_[static_cast<std::size_t>(i)];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(std::string_view s) {
    const int len = static_cast<int>(s.size());
    if (len > k_ + 1) return false;
    if (std::string_view(b_).substr(static_cast<std::size_t>(k_ + 1 - len), s.size()) != s) return false;
    j_ = k_ - len;
    return true;
  }

  void set_to(std::string_view s) {
    b_.replace(static_cast<std::size_t>(j_ + 1), static_cast<std::size_t>(k_ - j_), s);
    k_ = j_ + static_cast<int>(s.size());
    b_.resize(static_cast<std::size_t>(k_ + 1));
  }

  void r(std::string_view s) {
    if (m() > 0) set_to(s);
  }

  char at(int i) const { return b_[static_cast<std::size_t>(i)]; }

  void step1ab() {
    if (at(k_) == 's') {
      if (ends("sses"))
        k_ -= 2;
      else if (ends("ies"))
        set_to("i");
      else if (at(k_ - 1) != 's')
        --k_;
    }
    if (ends("eed")) {
      if (m() > 0) --k_;
    } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
      k_ = j_;
      if (ends("at")) {
        set_to("ate");
      } else if (ends("bl")) {
        set_to("ble");
      } else if (ends("iz")) {
        set_to("ize");
      } else if (double_c(k_)) {
        --k_;
        const char ch = at(k_);
        if (ch == 'l' || ch == 's' || ch == 'z') ++k_;
      } else if (m() == 1 && cvc(k_)) {
        set_to("e");
      }
    }
  }

  void step1c() {
    if (ends("y") && vowel_in_stem()) b_[static_cast<std::size_t>(k_)] = 'i';
  }

  // First matching suffix wins (lists are ordered longest-first where one
  // suffix ends another); the replacement then applies only if m() > 0.
  void replace_first(std::initializer_list<std::pair<std::string_view, std::string_view>> rules) {
    for (auto [suffix, repl] : rules) {
      if (ends(suffix)) {
        r(repl);
        return;
      }
    }
  }

  void step2() {
    replace_first({{"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"}, {"anci", "ance"},
                   {"izer", "ize"},    {"abli", "able"},  {"alli", "al"},   {"entli", "ent"},
                   {"eli", "e"},       {"ousli", "ous"},  {"ization", "ize"}, {"ation", "ate"},
                   {"ator", "ate"},    {"alism", "al"},   {"iveness", "ive"}, {"fulness", "ful"},
                   {"ousness", "ous"}, {"aliti", "al"},   {"iviti", "ive"},  {"biliti", "ble"}});
  }

  void step3() {
    replace_first({{"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
                   {"ical", "ic"},  {"ful", ""},   {"ness", ""}});
  }

  void step4() {
    static constexpr std::array<std::string_view, 19> suffixes{
        "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
        "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize"};
    // Longest matching suffix.
    std::string_view best;
    for (auto s : suffixes)
      if (s.size() > best.size() && static_cast<int>(s.size()) <= k_ + 1 &&
          std::string_view(b_).substr(static_cast<std::size_t>(k_ + 1) - s.size(), s.size()) == s)
        best = s;
    if (best.empty()) return;
    ends(best);
    if (best == "ion" && !(j_ >= 0 && (at(j_) == 's' || at(j_) == 't'))) return;
    if (m() > 1) k_ = j_;
  }

  void step5() {
    j_ = k_;
    if (at(k_) == 'e') {
      const int a = m();
      if (a > 1 || (a == 1 && !cvc(k_ - 1))) --k_;
    }
    if (at(k_) == 'l' && double_c(k_) && m() > 1) --k_;
  }

  std::string b_;
  int k_ = 0;
  int j_ = 0;
};

}  // namespace detail

/// Porter (1980) stemmer. Words of two characters or fewer are returned
/// unchanged.
inline std::string stem(std::string_view word) { return detail::PorterStemmer(std::string(word)).run(); }

}  // namespace misinfo
