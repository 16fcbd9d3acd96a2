#include "dotsim/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>

#include "dotsim/error.hpp"
#include "dotsim/rng.hpp"

namespace dotsim {
namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_int(std::string_view field, std::size_t line_no, const char* what) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (field.empty() || ec != std::errc{} || ptr != last) {
    throw ParseError(line_no, std::string("expected integer ") + what + ", got '" +
                                  std::string(field) + "'");
  }
  return value;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

}  // namespace

std::size_t RatingCorpus::num_interactions() const {
  std::size_t n = 0;
  for (const auto& list : positives) n += list.size();
  return n;
}

RatingCorpus parse_ratings(std::istream& in, std::optional<std::size_t> num_users,
                           std::optional<std::size_t> num_items) {
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t max_user = 0, max_item = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (is_blank(view)) continue;
    const auto fields = split_tabs(view);
    if (fields.size() != 4) {
      throw ParseError(line_no, "expected 4 tab-separated fields, got " +
                                    std::to_string(fields.size()));
    }
    Interaction x;
    x.user = parse_int<Index>(fields[0], line_no, "user");
    x.item = parse_int<Index>(fields[1], line_no, "item");
    {
      // Ratings may be written as "4" or "4.0"; the value itself is discarded.
      double rating = 0;
      const auto* last = fields[2].data() + fields[2].size();
      const auto [ptr, ec] = std::from_chars(fields[2].data(), last, rating);
      if (fields[2].empty() || ec != std::errc{} || ptr != last) {
        throw ParseError(line_no, "expected numeric rating, got '" + std::string(fields[2]) + "'");
      }
    }
    x.timestamp = parse_int<std::int64_t>(fields[3], line_no, "timestamp");
    if (num_users && x.user >= *num_users) {
      throw BoundsError("line " + std::to_string(line_no) + ": user " + std::to_string(x.user) +
                        " >= num_users " + std::to_string(*num_users));
    }
    if (num_items && x.item >= *num_items) {
      throw BoundsError("line " + std::to_string(line_no) + ": item " + std::to_string(x.item) +
                        " >= num_items " + std::to_string(*num_items));
    }
    max_user = std::max<std::size_t>(max_user, x.user + 1);
    max_item = std::max<std::size_t>(max_item, x.item + 1);
    rows.push_back(x);
  }

  RatingCorpus corpus;
  corpus.num_users = num_users.value_or(max_user);
  corpus.num_items = num_items.value_or(max_item);
  corpus.positives.resize(corpus.num_users);
  for (const auto& x : rows) corpus.positives[x.user].push_back(x);
  for (auto& list : corpus.positives) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    std::unordered_set<Index> seen;
    for (const auto& x : list) {
      if (!seen.insert(x.item).second) {
        throw ValidationError("duplicate (user, item) pair (" + std::to_string(x.user) + ", " +
                              std::to_string(x.item) + ")");
      }
    }
  }
  return corpus;
}

void write_ratings(std::ostream& out, const RatingCorpus& corpus) {
  for (const auto& list : corpus.positives) {
    for (const auto& x : list) {
      out << x.user << '\t' << x.item << "\t1\t" << x.timestamp << '\n';
    }
  }
}

void write_heldout(std::ostream& out, const std::vector<Heldout>& heldout) {
  for (const auto& h : heldout) out << h.user << '\t' << h.item << "\t1\t" << h.timestamp << '\n';
}

EvalSet parse_negatives(std::istream& in) {
  EvalSet eval_set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim_cr(line);
    if (is_blank(view)) continue;
    const auto fields = split_tabs(view);
    const std::string_view head = fields[0];
    const auto comma = head.find(',');
    if (head.size() < 5 || head.front() != '(' || head.back() != ')' ||
        comma == std::string_view::npos) {
      throw ParseError(line_no, "malformed (user,positive) header '" + std::string(head) + "'");
    }
    EvalCase c;
    c.user = parse_int<Index>(head.substr(1, comma - 1), line_no, "user");
    c.positive = parse_int<Index>(head.substr(comma + 1, head.size() - comma - 2), line_no,
                                  "positive item");
    for (std::size_t f = 1; f < fields.size(); ++f) {
      if (fields[f].empty()) continue;
      c.negatives.push_back(parse_int<Index>(fields[f], line_no, "negative item"));
    }
    eval_set.cases.push_back(std::move(c));
  }
  validate(eval_set);
  return eval_set;
}

void write_negatives(std::ostream& out, const EvalSet& eval_set) {
  for (const auto& c : eval_set.cases) {
    out << '(' << c.user << ',' << c.positive << ')';
    for (const auto n : c.negatives) out << '\t' << n;
    out << '\n';
  }
}

void validate(const EvalSet& eval_set) {
  std::unordered_set<Index> users;
  for (const auto& c : eval_set.cases) {
    if (!users.insert(c.user).second) {
      throw ValidationError("duplicate user " + std::to_string(c.user) + " in eval set");
    }
    std::unordered_set<Index> negs;
    for (const auto n : c.negatives) {
      if (n == c.positive) {
        throw ValidationError("user " + std::to_string(c.user) +
                              ": positive item appears among its negatives");
      }
      if (!negs.insert(n).second) {
        throw ValidationError("user " + std::to_string(c.user) + ": duplicate negative " +
                              std::to_string(n));
      }
    }
  }
}

TuningSplit make_tuning_split(const RatingCorpus& corpus) {
  TuningSplit split;
  split.train.num_users = corpus.num_users;
  split.train.num_items = corpus.num_items;
  split.train.positives = corpus.positives;
  for (std::size_t u = 0; u < corpus.num_users; ++u) {
    auto& list = split.train.positives[u];
    if (list.size() < 2) continue;
    const Interaction last = list.back();
    list.pop_back();
    split.heldout.push_back({last.user, last.item, last.timestamp});
  }
  return split;
}

EvalSet sample_eval_negatives(const RatingCorpus& corpus, const std::vector<Heldout>& heldout,
                              std::size_t n_neg, std::uint64_t seed) {
  if (n_neg < 1) throw ValidationError("n_neg must be >= 1");
  Rng rng = make_rng({seed, stream::kEvalNegatives});
  EvalSet out;
  out.cases.reserve(heldout.size());
  for (const auto& h : heldout) {
    if (h.user >= corpus.num_users) {
      throw BoundsError("heldout user " + std::to_string(h.user) + " outside corpus");
    }
    if (h.item >= corpus.num_items) {
      throw BoundsError("heldout item " + std::to_string(h.item) + " outside corpus");
    }
    std::unordered_set<Index> excluded;
    excluded.insert(h.item);
    for (const auto& x : corpus.positives[h.user]) excluded.insert(x.item);
    const std::size_t candidates = corpus.num_items - excluded.size();
    if (candidates < n_neg) {
      throw ValidationError("user " + std::to_string(h.user) + ": only " +
                            std::to_string(candidates) + " candidate items for " +
                            std::to_string(n_neg) + " negatives");
    }

    EvalCase c{h.user, h.item, {}};
    c.negatives.reserve(n_neg);
    if (2 * n_neg <= candidates) {
      std::uniform_int_distribution<Index> pick(0, static_cast<Index>(corpus.num_items - 1));
      while (c.negatives.size() < n_neg) {
        const Index j = pick(rng);
        if (excluded.insert(j).second) c.negatives.push_back(j);
      }
    } else {
      std::vector<Index> pool;
      pool.reserve(candidates);
      for (Index j = 0; j < corpus.num_items; ++j) {
        if (!excluded.contains(j)) pool.push_back(j);
      }
      for (std::size_t k = 0; k < n_neg; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
        std::swap(pool[k], pool[pick(rng)]);
        c.negatives.push_back(pool[k]);
      }
    }
    out.cases.push_back(std::move(c));
  }
  return out;
}

}  // namespace dotsim
