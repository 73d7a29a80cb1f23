#include "mknock/competition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mknock/common.hpp"

namespace mknock {

// -------------------------------------------------------------------------
// Tuning parameters and labels
// -------------------------------------------------------------------------

TuningParams make_params(int d, int i_c, int i_lambda) {
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    const int d1 = d + 1;
    if (i_c < 1 || i_c > d1 - 1)
        throw std::invalid_argument("i_c must be in [1, d], got " + std::to_string(i_c));
    if (i_lambda < i_c || i_lambda > d1 - 1)
        throw std::invalid_argument("i_lambda must be in [i_c, d], got " +
                                    std::to_string(i_lambda));
    return TuningParams{d1, i_c, i_lambda};
}

TuningParams mirror_params(int d) {
    // c = lambda = 1/2; requires an even d1, i.e. odd d.
    const int d1 = d + 1;
    if (d1 % 2 != 0)
        throw std::invalid_argument("mirror needs (d+1)/2 integral, got d=" +
                                    std::to_string(d));
    return make_params(d, d1 / 2, d1 / 2);
}

TuningParams max_params(int d) {
    return make_params(d, 1, 1);
}

std::vector<int> assign_labels(const ScoreTable& scores, const TuningParams& params) {
    if (params.d1 != scores.d1())
        throw std::invalid_argument("params d1=" + std::to_string(params.d1) +
                                    " does not match table d1=" +
                                    std::to_string(scores.d1()));
    const int p = scores.p();
    std::vector<int> labels(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        const int r = scores.ranks[static_cast<std::size_t>(i)];
        if (r >= params.d1 - params.i_c + 1)
            labels[static_cast<std::size_t>(i)] = 1;
        else if (r <= params.d1 - params.i_lambda)
            labels[static_cast<std::size_t>(i)] = -1;
        else
            labels[static_cast<std::size_t>(i)] = 0;
    }
    return labels;
}

// -------------------------------------------------------------------------
// Mirandom map
// -------------------------------------------------------------------------

MatrixXd mirandom_cell_probabilities(const TuningParams& params) {
    const int ic = params.i_c;
    const int big_d = params.d1 - params.i_lambda;  // number of decoy-win ranks
    MatrixXd probs = MatrixXd::Zero(big_d, ic);
    // Rank r maps to [(r-1)*ic, r*ic) against cells [(j-1)*D, j*D),
    // everything scaled by D so overlaps are integers.
    for (int r = 1; r <= big_d; ++r) {
        for (int j = 1; j <= ic; ++j) {
            const long lo = std::max(static_cast<long>(r - 1) * ic,
                                     static_cast<long>(j - 1) * big_d);
            const long hi = std::min(static_cast<long>(r) * ic,
                                     static_cast<long>(j) * big_d);
            if (hi > lo)
                probs(r - 1, j - 1) = static_cast<double>(hi - lo) / ic;
        }
    }
    return probs;
}

namespace {

// Entry index (1..d) of the ordinal-th largest knockoff score of feature
// i under keyed descending order.
int knockoff_entry_at_ordinal(const ScoreTable& scores, int i, int ordinal) {
    const int d = scores.d;
    int best = -1;
    std::vector<char> used(static_cast<std::size_t>(d + 1), 0);
    for (int take = 0; take < ordinal; ++take) {
        best = -1;
        double bs = 0.0, bk = 0.0;
        for (int j = 1; j <= d; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const double s = scores.scores(i, j);
            const double key = tie_key(scores.tie_seed, static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(j));
            if (best < 0 || s > bs || (s == bs && key > bk)) {
                best = j;
                bs = s;
                bk = key;
            }
        }
        used[static_cast<std::size_t>(best)] = 1;
    }
    return best;
}

// Entry index backing each feature's selected score.
std::vector<int> selected_entries(const ScoreTable& scores,
                                  const std::vector<int>& labels,
                                  const TuningParams& params, Rng& rng) {
    if (labels.size() != static_cast<std::size_t>(scores.p()))
        throw std::invalid_argument("label count != feature count");
    const MatrixXd cells = mirandom_cell_probabilities(params);
    std::vector<int> entries(static_cast<std::size_t>(scores.p()));
    for (int i = 0; i < scores.p(); ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label == 1) {
            entries[static_cast<std::size_t>(i)] = 0;
        } else if (label == 0) {
            entries[static_cast<std::size_t>(i)] = static_cast<int>(
                rng.uniform_int(static_cast<std::uint64_t>(scores.d1())));
        } else {
            const int r = scores.ranks[static_cast<std::size_t>(i)];
            int ordinal = -1;
            int nonzero = 0;
            for (int j = 0; j < params.i_c; ++j)
                if (cells(r - 1, j) > 0) {
                    ++nonzero;
                    ordinal = j + 1;
                }
            if (nonzero > 1) {
                const double u = rng.uniform();
                double acc = 0.0;
                for (int j = 0; j < params.i_c; ++j) {
                    acc += cells(r - 1, j);
                    if (u < acc) {
                        ordinal = j + 1;
                        break;
                    }
                }
            }
            entries[static_cast<std::size_t>(i)] =
                knockoff_entry_at_ordinal(scores, i, ordinal);
        }
    }
    return entries;
}

}  // namespace

VectorXd mirandom_select(const ScoreTable& scores, const std::vector<int>& labels,
                         const TuningParams& params, Rng& rng) {
    const std::vector<int> entries = selected_entries(scores, labels, params, rng);
    VectorXd w(scores.p());
    for (int i = 0; i < scores.p(); ++i)
        w(i) = scores.scores(i, entries[static_cast<std::size_t>(i)]);
    return w;
}

// -------------------------------------------------------------------------
// Sorting and selection
// -------------------------------------------------------------------------

namespace {

// Entry backing each feature's selected score; its tie key orders equal
// W values.
struct WinEntry {
    double w;
    double key;
    int feature;
};

bool w_greater(const WinEntry& a, const WinEntry& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.key != b.key) return a.key > b.key;
    return a.feature < b.feature;
}

}  // namespace

CompetitionOutcome compete(const ScoreTable& scores, const TuningParams& params,
                           Rng& rng) {
    CompetitionOutcome out;
    out.params = params;
    out.labels = assign_labels(scores, params);

    const int p = scores.p();
    const std::vector<int> picked = selected_entries(scores, out.labels, params, rng);
    out.w.resize(p);
    std::vector<WinEntry> entries(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        const int entry = picked[static_cast<std::size_t>(i)];
        out.w(i) = scores.scores(i, entry);
        entries[static_cast<std::size_t>(i)] =
            WinEntry{out.w(i),
                     tie_key(scores.tie_seed, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(entry)),
                     i};
    }

    std::sort(entries.begin(), entries.end(), w_greater);
    out.order.resize(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i)
        out.order[static_cast<std::size_t>(i)] = entries[static_cast<std::size_t>(i)].feature;
    return out;
}

Selection select_discoveries(const CompetitionOutcome& outcome, double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw std::invalid_argument("alpha must be in [0, 1), got " +
                                    std::to_string(alpha));

    // Eq. ratio test cross-multiplied: (1 + neg) * i_c <= alpha * max(pos,1)
    // * (d1 - i_lambda); integer counts stay exact.
    const double ic = outcome.params.i_c;
    const double denom_scale = outcome.params.d1 - outcome.params.i_lambda;
    long pos = 0, neg = 0;
    int i_star = 0;
    long pos_at_star = 0;
    for (std::size_t i = 0; i < outcome.order.size(); ++i) {
        const int label = outcome.labels[static_cast<std::size_t>(outcome.order[i])];
        if (label == 1) ++pos;
        if (label == -1) ++neg;
        const double lhs = static_cast<double>(1 + neg) * ic;
        const double rhs =
            alpha * static_cast<double>(std::max(pos, 1L)) * denom_scale;
        if (lhs <= rhs) {
            i_star = static_cast<int>(i) + 1;
            pos_at_star = pos;
        }
    }

    Selection sel;
    sel.i_star = i_star;
    if (pos_at_star > 0) {
        for (int i = 0; i < i_star; ++i) {
            const int f = outcome.order[static_cast<std::size_t>(i)];
            if (outcome.labels[static_cast<std::size_t>(f)] == 1)
                sel.discoveries.push_back(f);
        }
        std::sort(sel.discoveries.begin(), sel.discoveries.end());
    }
    return sel;
}

// -------------------------------------------------------------------------
// Single-knockoff reference (oracle for the d = 1 equivalence)
// -------------------------------------------------------------------------

namespace {

struct KeyedScore {
    double value;
    double key;
    int feature;
};

bool keyed_greater(const KeyedScore& a, const KeyedScore& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.key != b.key) return a.key > b.key;
    return a.feature < b.feature;
}

}  // namespace

std::vector<int> knockoff_plus_reference(const VectorXd& z, const VectorXd& z_tilde,
                                         double alpha, std::uint64_t tie_seed) {
    if (z.size() != z_tilde.size())
        throw std::invalid_argument("z and z_tilde must have equal length");
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw std::invalid_argument("alpha must be in [0, 1)");
    const auto p = static_cast<int>(z.size());

    std::vector<KeyedScore> wins, losses;
    for (int i = 0; i < p; ++i) {
        const KeyedScore orig{z(i), tie_key(tie_seed, static_cast<std::uint64_t>(i), 0), i};
        const KeyedScore knock{z_tilde(i),
                               tie_key(tie_seed, static_cast<std::uint64_t>(i), 1), i};
        if (keyed_greater(knock, orig))
            losses.push_back(knock);
        else
            wins.push_back(orig);
    }
    std::sort(wins.begin(), wins.end(), keyed_greater);
    std::sort(losses.begin(), losses.end(), keyed_greater);

    // FDR among the top k original wins is estimated by (1 + #{knockoff
    // wins above the k-th original win}) / k; take the largest k passing.
    int k_star = 0;
    std::size_t li = 0;
    for (std::size_t k = 0; k < wins.size(); ++k) {
        while (li < losses.size() && keyed_greater(losses[li], wins[k])) ++li;
        const double fdr_hat =
            static_cast<double>(1 + li) / static_cast<double>(k + 1);
        if (fdr_hat <= alpha) k_star = static_cast<int>(k) + 1;
    }

    std::vector<int> out;
    for (int k = 0; k < k_star; ++k)
        out.push_back(wins[static_cast<std::size_t>(k)].feature);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace mknock
