#pragma once

#include <cstddef>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metaadd/common.hpp"

namespace metaadd::metafeat {

/// Tumbling-window layout of a meta-sample: `L` gaps computed from `L + 1`
/// consecutive windows of `n` timestamps each.
struct WindowSpec {
    std::size_t n = 25;
    std::size_t L = 100;
    /// Replace every gap by its absolute value.
    bool sign_agnostic = false;

    std::size_t extent() const noexcept { return (L + 1) * n; }
    /// Throws std::invalid_argument unless n >= 1 and L >= 1.
    void validate() const;
};

struct MetaSample {
    std::vector<double> gaps;
    std::optional<DriftKind> label;
    std::size_t window_size = 0;
    std::string source;
    std::size_t offset = 0;  ///< timestamp of the first element used
};

/// Means of consecutive non-overlapping windows of length n; a trailing
/// partial window is dropped. Throws if the trace holds fewer than 2n items.
std::vector<double> window_means(std::span<const int> trace, std::size_t n);

/// Differences of consecutive means. Throws if fewer than two means.
std::vector<double> gaps(std::span<const double> means);

/// Builds a meta-sample from the most recent spec.extent() elements.
MetaSample make_meta_sample(std::span<const int> trace, const WindowSpec& spec,
                            std::optional<DriftKind> label = std::nullopt);

/// Incremental counterpart of make_meta_sample for a live error feed. Windows
/// are aligned to the start of the feed; once L + 1 windows are complete a
/// sample is emitted at every window boundary.
class StreamingView {
  public:
    explicit StreamingView(WindowSpec spec);

    std::optional<MetaSample> push(int error);

    /// Number of elements consumed so far.
    std::size_t position() const noexcept { return position_; }
    /// Completed window means currently retained, oldest first.
    std::vector<double> recent_means() const { return {means_.begin(), means_.end()}; }
    const WindowSpec& spec() const noexcept { return spec_; }

  private:
    WindowSpec spec_;
    std::size_t position_ = 0;
    long long window_sum_ = 0;
    std::size_t window_fill_ = 0;
    std::deque<double> means_;
};

/// Corpus CSV: an optional `# meta: {json}` line, a header
/// `gap_0,...,gap_{L-1},label`, then one row per sample. Unlabeled samples
/// have an empty label field. Values are written with 17 significant digits.
void write_corpus(std::ostream& out, std::span<const MetaSample> corpus, const std::string& meta_json = {});
std::vector<MetaSample> read_corpus(std::istream& in);

void write_corpus_file(const std::string& path, std::span<const MetaSample> corpus, const std::string& meta_json = {});
std::vector<MetaSample> read_corpus_file(const std::string& path);

}  // namespace metaadd::metafeat
