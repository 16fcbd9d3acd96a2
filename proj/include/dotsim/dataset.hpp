#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

namespace dotsim {

using Index = std::uint32_t;

struct Interaction {
  Index user = 0;
  Index item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Implicit-feedback positives grouped by user. Each user's list is ordered by
// ascending timestamp, ties kept in input order.
struct RatingCorpus {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::vector<Interaction>> positives;  // indexed by user, size num_users

  std::size_t num_interactions() const;

  friend bool operator==(const RatingCorpus&, const RatingCorpus&) = default;
};

struct EvalCase {
  Index user = 0;
  Index positive = 0;
  std::vector<Index> negatives;

  friend bool operator==(const EvalCase&, const EvalCase&) = default;
};

struct EvalSet {
  std::vector<EvalCase> cases;

  friend bool operator==(const EvalSet&, const EvalSet&) = default;
};

struct Heldout {
  Index user = 0;
  Index item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Heldout&, const Heldout&) = default;
};

struct TuningSplit {
  RatingCorpus train;
  std::vector<Heldout> heldout;  // ascending user order
};

/// Reads `user<TAB>item<TAB>rating<TAB>timestamp` lines. The rating column is
/// ignored. When a count is not supplied it is inferred as max index + 1.
/// Throws ParseError (with line number) for malformed lines, BoundsError for
/// indices beyond a declared count, ValidationError for a repeated (user, item).
RatingCorpus parse_ratings(std::istream& in, std::optional<std::size_t> num_users = std::nullopt,
                           std::optional<std::size_t> num_items = std::nullopt);

/// Writes the corpus back in the `.rating` format (rating column written as 1),
/// users ascending, each user's list in stored order.
void write_ratings(std::ostream& out, const RatingCorpus& corpus);

void write_heldout(std::ostream& out, const std::vector<Heldout>& heldout);

/// Reads `(user,positive)<TAB>neg...` lines. Negative counts are kept exactly
/// as given. Throws ParseError on a malformed header tuple and ValidationError
/// when a user repeats, a negative repeats, or the positive is among the
/// negatives.
EvalSet parse_negatives(std::istream& in);

void write_negatives(std::ostream& out, const EvalSet& eval_set);

// Throws ValidationError when an EvalSet invariant is broken.
void validate(const EvalSet& eval_set);

/// Moves each user's latest interaction to the heldout list. Users with a
/// single interaction keep it and produce no heldout entry.
TuningSplit make_tuning_split(const RatingCorpus& corpus);

/// Draws n_neg distinct items per heldout pair, uniformly among the items that
/// are neither the heldout positive nor any of that user's training positives.
EvalSet sample_eval_negatives(const RatingCorpus& corpus, const std::vector<Heldout>& heldout,
                              std::size_t n_neg, std::uint64_t seed);

}  // namespace dotsim
