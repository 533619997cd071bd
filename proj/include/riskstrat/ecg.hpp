#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "riskstrat/common.hpp"
#include "riskstrat/ecg_trace.hpp"

namespace riskstrat {

struct NoTraceFound : DataError {
    using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Raster images
// ---------------------------------------------------------------------------

struct LeadBox {
    std::string lead;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0, x1) x [y0, y1)
    int baseline_row = 0;
};

/// Grayscale image with paper calibration. Standard ECG paper runs at
/// 25 mm/s and 10 mm/mV; the pixel pitch maps those onto pixels.
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 0 = black
    double mm_per_px_x = 0.1;
    double mm_per_px_y = 0.1;
    double paper_speed_mm_per_s = 25.0;
    double gain_mm_per_mv = 10.0;
    std::vector<LeadBox> leads;
    std::vector<std::string> notes;

    RasterImage() = default;
    RasterImage(int w, int h, std::uint8_t fill = 255) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

    double px_per_second() const { return paper_speed_mm_per_s / mm_per_px_x; }
    double mv_per_px() const { return mm_per_px_y / gain_mm_per_mv; }

    void validate() const {
        if (width <= 0 || height <= 0) throw DataError("image has no pixels");
        if (pixels.size() != static_cast<std::size_t>(width) * height) throw DataError("image pixel buffer size mismatch");
        if (!(mm_per_px_x > 0.0 && mm_per_px_y > 0.0 && paper_speed_mm_per_s > 0.0 && gain_mm_per_mv > 0.0)) {
            throw DataError("image calibration factors must be positive");
        }
    }
};

// Binary PGM (P5). Calibration and lead boxes travel in comment lines:
//   # riskstrat mm_per_px_x=0.1 mm_per_px_y=0.1 paper_speed=25 gain=10
//   # riskstrat lead=II box=0,0,625,200 baseline=100
inline void write_pgm(const RasterImage& img, std::ostream& out) {
    img.validate();
    out << "P5\n";
    out << "# riskstrat mm_per_px_x=" << format_double(img.mm_per_px_x) << " mm_per_px_y="
        << format_double(img.mm_per_px_y) << " paper_speed=" << format_double(img.paper_speed_mm_per_s)
        << " gain=" << format_double(img.gain_mm_per_mv) << '\n';
    for (const auto& l : img.leads) {
        out << "# riskstrat lead=" << l.lead << " box=" << l.x0 << ',' << l.y0 << ',' << l.x1 << ',' << l.y1
            << " baseline=" << l.baseline_row << '\n';
    }
    out << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void save_pgm(const RasterImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image " + path);
    write_pgm(img, out);
}

inline RasterImage read_pgm(std::istream& in, const std::string& origin = "<stream>") {
    RasterImage img;
    std::string magic;
    in >> magic;
    if (magic != "P5") throw DataError(origin + ": not a binary PGM (P5) file");
    auto parse_comment = [&](const std::string& line) {
        std::istringstream ls(line);
        std::string hash, tag;
        ls >> hash >> tag;
        if (tag != "riskstrat") return;
        LeadBox box;
        bool is_lead = false;
        std::string kv;
        while (ls >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            const auto key = kv.substr(0, eq);
            const auto val = kv.substr(eq + 1);
            double d = 0.0;
            if (key == "lead") {
                is_lead = true;
                box.lead = val;
            } else if (key == "box") {
                const auto p = split(val, ',');
                if (p.size() != 4) throw DataError(origin + ": malformed lead box");
                box.x0 = std::stoi(p[0]);
                box.y0 = std::stoi(p[1]);
                box.x1 = std::stoi(p[2]);
                box.y1 = std::stoi(p[3]);
            } else if (key == "baseline") {
                box.baseline_row = std::stoi(val);
            } else if (parse_double(val, d)) {
                if (key == "mm_per_px_x") img.mm_per_px_x = d;
                else if (key == "mm_per_px_y") img.mm_per_px_y = d;
                else if (key == "paper_speed") img.paper_speed_mm_per_s = d;
                else if (key == "gain") img.gain_mm_per_mv = d;
            }
        }
        if (is_lead) img.leads.push_back(box);
    };
    std::array<long, 3> header{};
    std::size_t got = 0;
    while (got < 3) {
        in >> std::ws;
        if (in.peek() == '#') {
            std::string line;
            std::getline(in, line);
            parse_comment(line);
            continue;
        }
        if (!(in >> header[got])) throw DataError(origin + ": truncated PGM header");
        ++got;
    }
    if (header[2] != 255) throw DataError(origin + ": only 8-bit PGM (maxval 255) is supported");
    in.get();  // single whitespace byte before the raster
    img.width = static_cast<int>(header[0]);
    img.height = static_cast<int>(header[1]);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw DataError(origin + ": truncated PGM raster");
    img.validate();
    return img;
}

inline RasterImage load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path);
    return read_pgm(in, path);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct RenderCalibration {
    double mm_per_px_x = 0.1;
    double mm_per_px_y = 0.1;
    double paper_speed_mm_per_s = 25.0;
    double gain_mm_per_mv = 10.0;
    int height = 300;
    std::optional<int> baseline_row;  // default: image centre
};

/// Draws one channel as a 1-pixel polyline (hard black pixels on white).
/// Each column is filled between the midpoints towards its neighbours so the
/// line stays connected on steep segments. Rows outside the image are
/// clipped and a note is recorded.
inline RasterImage render_trace(const EcgTrace& trace, const RenderCalibration& cal, std::size_t channel = 0) {
    trace.validate();
    if (channel >= trace.n_channels()) throw DataError("render_trace: channel out of range");
    const auto& x = trace.channels[channel];
    RasterImage img;
    img.mm_per_px_x = cal.mm_per_px_x;
    img.mm_per_px_y = cal.mm_per_px_y;
    img.paper_speed_mm_per_s = cal.paper_speed_mm_per_s;
    img.gain_mm_per_mv = cal.gain_mm_per_mv;
    const double px_per_s = img.px_per_second();
    const int width = std::max(1, static_cast<int>(std::floor(static_cast<double>(x.size() - 1) / trace.sample_rate * px_per_s)) + 1);
    img.width = width;
    img.height = cal.height;
    img.pixels.assign(static_cast<std::size_t>(width) * cal.height, 255);
    const int baseline = cal.baseline_row.value_or(cal.height / 2);
    img.leads.push_back({trace.lead_names[channel], 0, 0, width, cal.height, baseline});

    std::vector<double> rows(width);
    for (int c = 0; c < width; ++c) {
        const double pos = static_cast<double>(c) / px_per_s * trace.sample_rate;
        const auto i0 = std::min(static_cast<std::size_t>(pos), x.size() - 1);
        const auto i1 = std::min(i0 + 1, x.size() - 1);
        const double frac = pos - static_cast<double>(i0);
        const double v = x[i0] + frac * (x[i1] - x[i0]);
        rows[c] = static_cast<double>(baseline) - v / img.mv_per_px();
    }
    bool clipped = false;
    auto clamp_row = [&](double r) {
        const long ri = std::lround(r);
        if (ri < 0 || ri >= cal.height) clipped = true;
        return static_cast<int>(std::clamp<long>(ri, 0, cal.height - 1));
    };
    for (int c = 0; c < width; ++c) {
        const int r = clamp_row(rows[c]);
        int lo = r, hi = r;
        for (int nb : {c - 1, c + 1}) {
            if (nb < 0 || nb >= width) continue;
            const int m = clamp_row(0.5 * (rows[c] + rows[nb]));
            lo = std::min(lo, m);
            hi = std::max(hi, m);
        }
        for (int y = lo; y <= hi; ++y) img.at(c, y) = 0;
    }
    if (clipped) img.notes.push_back("amplitude outside image height was clipped");
    return img;
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

struct TraceExtractionConfig {
    std::size_t rollout_budget = 48;
    double exploration = 0.7;
    int darkness_threshold = 128;
    int max_step = 12;
    std::size_t horizon = 6;
    double step_penalty = 0.1;     // lambda in darkness - lambda * step^2
    double rollout_epsilon = 0.1;  // random move probability in rollouts
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (rollout_budget < 1) throw ConfigError("rollout_budget must be >= 1");
        if (max_step < 1) throw ConfigError("max_step must be >= 1");
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (darkness_threshold < 1 || darkness_threshold > 256) throw ConfigError("darkness_threshold must lie in [1, 256]");
    }
};

namespace detail {

class TraceSearch {
public:
    TraceSearch(const RasterImage& img, const LeadBox& box, const TraceExtractionConfig& cfg)
        : img_(img), box_(box), cfg_(cfg), rng_(cfg.rng_seed) {}

    double darkness(int x, int y) const {
        const int v = img_.at(x, y);
        return v < cfg_.darkness_threshold ? (255.0 - v) / 255.0 : 0.0;
    }

    // Darkness collected along the vertical segment entering (x, to) from
    // row `from`, minus the step penalty.
    double move_reward(int x, int from, int to) const {
        const int lo = std::min(from, to), hi = std::max(from, to);
        double d = 0.0;
        for (int y = lo; y <= hi; ++y) d += darkness(x, y);
        const double step = static_cast<double>(to - from);
        return d - cfg_.step_penalty * step * step;
    }

    int row_lo(int r) const { return std::max(box_.y0, r - cfg_.max_step); }
    int row_hi(int r) const { return std::min(box_.y1 - 1, r + cfg_.max_step); }

    // Chooses the row for column x + 1 given the row at column x.
    int choose(int x, int row) {
        struct Node {
            int row;
            int depth;  // columns ahead of x
            double reward;  // immediate reward of the move into this node
            std::size_t visits = 0;
            double total = 0.0;
            double best = -std::numeric_limits<double>::infinity();
            std::vector<std::size_t> children;
            std::vector<int> untried;
        };
        const int last_col = box_.x1 - 1;
        std::vector<Node> tree;
        tree.push_back({row, 0, 0.0, 0, 0.0, -std::numeric_limits<double>::infinity(), {}, actions(row)});
        for (std::size_t it = 0; it < cfg_.rollout_budget; ++it) {
            std::vector<std::size_t> path{0};
            std::size_t cur = 0;
            while (tree[cur].untried.empty() && !tree[cur].children.empty() &&
                   static_cast<std::size_t>(tree[cur].depth) < cfg_.horizon) {
                const double log_n = std::log(static_cast<double>(tree[cur].visits));
                std::size_t best = tree[cur].children.front();
                double best_score = -std::numeric_limits<double>::infinity();
                for (auto ch : tree[cur].children) {
                    const auto& c = tree[ch];
                    const double s = c.total / static_cast<double>(c.visits) +
                                     cfg_.exploration * std::sqrt(log_n / static_cast<double>(c.visits));
                    if (s > best_score) {
                        best_score = s;
                        best = ch;
                    }
                }
                cur = best;
                path.push_back(cur);
            }
            const int cur_col = x + tree[cur].depth;
            if (!tree[cur].untried.empty() && static_cast<std::size_t>(tree[cur].depth) < cfg_.horizon &&
                cur_col < last_col) {
                auto& untried = tree[cur].untried;
                const std::size_t pick = rng_.index(untried.size());
                const int next_row = untried[pick];
                untried.erase(untried.begin() + static_cast<long>(pick));
                Node child{next_row, tree[cur].depth + 1, move_reward(cur_col + 1, tree[cur].row, next_row), 0, 0.0,
                           -std::numeric_limits<double>::infinity(), {}, actions(next_row)};
                tree.push_back(std::move(child));
                tree[cur].children.push_back(tree.size() - 1);
                cur = tree.size() - 1;
                path.push_back(cur);
            }
            // Rollout from the leaf to the horizon. A fresh leaf gets a purely
            // greedy rollout first; random moves only explore on revisits.
            const bool greedy = tree[cur].visits == 0;
            double tail = 0.0;
            int r = tree[cur].row;
            for (int col = x + tree[cur].depth; col < last_col && static_cast<std::size_t>(col - x) < cfg_.horizon; ++col) {
                const int next = rollout_move(col + 1, r, greedy);
                tail += move_reward(col + 1, r, next);
                r = next;
            }
            // Backpropagate the return seen from each node on the path.
            double ret = tail;
            for (auto p = path.rbegin(); p != path.rend(); ++p) {
                auto& n = tree[*p];
                ret += n.reward;
                n.visits += 1;
                n.total += ret;
                n.best = std::max(n.best, ret);
            }
        }
        // The image is fixed and only the rollout policy is random, so the best
        // return seen below a move is a lower bound on what that move can reach.
        const auto& root = tree.front();
        int best_row = row;
        double best_ret = -std::numeric_limits<double>::infinity();
        for (auto ch : root.children) {
            const double m = tree[ch].best;
            if (m > best_ret || (m == best_ret && std::abs(tree[ch].row - row) < std::abs(best_row - row))) {
                best_ret = m;
                best_row = tree[ch].row;
            }
        }
        return best_row;
    }

    // Centroid of the contiguous dark run containing (x, y); y itself when the
    // pixel is not dark.
    double refine(int x, int y) const {
        if (darkness(x, y) <= 0.0) return y;
        int lo = y, hi = y;
        while (lo - 1 >= box_.y0 && darkness(x, lo - 1) > 0.0) --lo;
        while (hi + 1 < box_.y1 && darkness(x, hi + 1) > 0.0) ++hi;
        double wsum = 0.0, acc = 0.0;
        for (int r = lo; r <= hi; ++r) {
            const double w = darkness(x, r);
            wsum += w;
            acc += w * r;
        }
        return acc / wsum;
    }

private:
    std::vector<int> actions(int r) const {
        std::vector<int> a;
        for (int y = row_lo(r); y <= row_hi(r); ++y) a.push_back(y);
        return a;
    }

    int rollout_move(int col, int r, bool greedy) {
        const int lo = row_lo(r), hi = row_hi(r);
        if (!greedy && rng_.uniform() < cfg_.rollout_epsilon) return lo + static_cast<int>(rng_.index(static_cast<std::size_t>(hi - lo + 1)));
        int best = r;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int y = lo; y <= hi; ++y) {
            const double v = move_reward(col, r, y);
            if (v > best_v || (v == best_v && std::abs(y - r) < std::abs(best - r))) {
                best_v = v;
                best = y;
            }
        }
        return best;
    }

    const RasterImage& img_;
    const LeadBox& box_;
    const TraceExtractionConfig& cfg_;
    Rng rng_;
};

}  // namespace detail

/// Follows a dark trace left to right inside one lead box, one output sample
/// per pixel column. At each column a Monte-Carlo tree search over the next
/// `horizon` columns scores candidate rows by collected darkness minus
/// `step_penalty * step^2`; the chosen pixel is refined to the centroid of its
/// dark run and converted to millivolts relative to the baseline row.
inline EcgTrace extract_trace(const RasterImage& img, const TraceExtractionConfig& cfg,
                              std::optional<LeadBox> box_opt = std::nullopt) {
    img.validate();
    cfg.validate();
    LeadBox box = box_opt ? *box_opt
                          : (img.leads.empty() ? LeadBox{"II", 0, 0, img.width, img.height, img.height / 2} : img.leads.front());
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > img.width || box.y1 > img.height || box.x0 >= box.x1 || box.y0 >= box.y1) {
        throw DataError("lead box lies outside the image");
    }
    detail::TraceSearch search(img, box, cfg);

    const int ncols = box.x1 - box.x0;
    int empty_cols = 0;
    int first_dark_col = -1;
    for (int x = box.x0; x < box.x1; ++x) {
        bool any = false;
        for (int y = box.y0; y < box.y1 && !any; ++y) any = search.darkness(x, y) > 0.0;
        if (!any) ++empty_cols;
        else if (first_dark_col < 0) first_dark_col = x;
    }
    if (first_dark_col < 0 || empty_cols * 5 >= ncols) {
        throw NoTraceFound("no dark trace found in lead '" + box.lead + "' (" + std::to_string(empty_cols) + " of " +
                           std::to_string(ncols) + " columns empty)");
    }

    // Start on the dark pixel nearest the baseline in the first dark column.
    int row = box.baseline_row;
    int best_dist = std::numeric_limits<int>::max();
    for (int y = box.y0; y < box.y1; ++y) {
        if (search.darkness(first_dark_col, y) > 0.0 && std::abs(y - box.baseline_row) < best_dist) {
            best_dist = std::abs(y - box.baseline_row);
            row = y;
        }
    }
    std::vector<double> rows(static_cast<std::size_t>(ncols));
    const double start = search.refine(first_dark_col, row);
    for (int x = box.x0; x <= first_dark_col; ++x) rows[static_cast<std::size_t>(x - box.x0)] = start;
    for (int x = first_dark_col; x + 1 < box.x1; ++x) {
        row = search.choose(x, row);
        rows[static_cast<std::size_t>(x + 1 - box.x0)] = search.refine(x + 1, row);
    }

    EcgTrace trace;
    trace.lead_names.push_back(box.lead);
    trace.sample_rate = img.px_per_second();
    std::vector<double> mv(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) mv[i] = (static_cast<double>(box.baseline_row) - rows[i]) * img.mv_per_px();
    trace.channels.push_back(std::move(mv));
    trace.notes.push_back("extracted from raster at " + format_general(trace.sample_rate, 6) + " Hz");
    return trace;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Linear-interpolation resampling to `target_rate` and `target_len`. When
/// the source is shorter than the requested duration it is tiled
/// periodically and `tiled` is set. `mv_per_unit` converts raster-derived
/// units to millivolts; resampling itself applies no gain.
inline EcgTrace resample_and_rescale(const EcgTrace& trace, double target_rate, std::size_t target_len,
                                     double mv_per_unit = 1.0) {
    if (!(target_rate > 0.0)) throw ConfigError("target_rate must be positive");
    if (trace.n_samples() == 0) throw DataError("cannot resample an empty trace");
    trace.validate();
    EcgTrace out;
    out.lead_names = trace.lead_names;
    out.sample_rate = target_rate;
    out.unit = "mV";
    out.notes = trace.notes;
    const std::size_t n = trace.n_samples();
    const double ratio = trace.sample_rate / target_rate;
    for (const auto& ch : trace.channels) {
        std::vector<double> y(target_len);
        for (std::size_t k = 0; k < target_len; ++k) {
            double pos = static_cast<double>(k) * ratio;
            double v;
            if (pos <= static_cast<double>(n - 1)) {
                const auto i0 = static_cast<std::size_t>(pos);
                const double frac = pos - static_cast<double>(i0);
                v = frac == 0.0 ? ch[i0] : ch[i0] + frac * (ch[std::min(i0 + 1, n - 1)] - ch[i0]);
            } else {
                out.tiled = true;
                pos = std::fmod(pos, static_cast<double>(n));
                const auto i0 = static_cast<std::size_t>(pos);
                const double frac = pos - static_cast<double>(i0);
                const double a = ch[i0], b = ch[(i0 + 1) % n];
                v = frac == 0.0 ? a : a + frac * (b - a);
            }
            y[k] = mv_per_unit == 1.0 ? v : v * mv_per_unit;
        }
        out.channels.push_back(std::move(y));
    }
    if (out.tiled) out.notes.push_back("tiled periodically from " + std::to_string(n) + " source samples");
    return out;
}

// ---------------------------------------------------------------------------
// Surrogate encoder
// ---------------------------------------------------------------------------

inline constexpr std::size_t kEmbedChannels = 12;
inline constexpr std::size_t kEmbedSamples = 1000;

/// Fixed random convolution bank: 64 dilated 12-channel kernels with nine
/// taps, rectified and pooled by mean and max into 128 values. The weights
/// derive from a constant seed, so the map is a deterministic, 1-Lipschitz
/// (per output, in the max norm) stand-in for a pretrained encoder. It
/// carries no learned clinical signal.
class SurrogateEncoder {
public:
    static constexpr std::size_t kKernels = 64;
    static constexpr std::size_t kTaps = 9;
    static constexpr std::size_t kStride = 2;
    static constexpr std::uint64_t kSeed = 0x45434745'4d424544ULL;

    SurrogateEncoder() {
        Rng rng(kSeed);
        static constexpr std::array<std::size_t, 6> kDilations = {1, 2, 4, 8, 16, 32};
        for (std::size_t k = 0; k < kKernels; ++k) {
            Kernel ker;
            ker.dilation = kDilations[k % kDilations.size()];
            double l1 = 0.0;
            for (auto& w : ker.weights) {
                w = rng.uniform(-1.0, 1.0);
                l1 += std::abs(w);
            }
            for (auto& w : ker.weights) w /= l1;
            ker.bias = rng.uniform(-0.05, 0.05);
            kernels_.push_back(ker);
        }
    }

    std::vector<double> operator()(const EcgTrace& trace) const {
        if (trace.n_channels() != kEmbedChannels || trace.n_samples() != kEmbedSamples) {
            throw DataError("embedding expects shape (12, 1000), got (" + std::to_string(trace.n_channels()) + ", " +
                            std::to_string(trace.n_samples()) + ")");
        }
        for (const auto& ch : trace.channels) {
            if (ch.size() != kEmbedSamples) throw DataError("embedding expects equal-length channels");
            for (double v : ch) {
                if (!std::isfinite(v)) throw DataError("embedding input contains a non-finite value");
            }
        }
        std::vector<double> out(2 * kKernels);
        for (std::size_t k = 0; k < kKernels; ++k) {
            const auto& ker = kernels_[k];
            const std::size_t span = (kTaps - 1) * ker.dilation;
            double sum = 0.0, mx = 0.0;
            std::size_t count = 0;
            for (std::size_t t = 0; t + span < kEmbedSamples; t += kStride) {
                double acc = ker.bias;
                for (std::size_t c = 0; c < kEmbedChannels; ++c) {
                    const auto& x = trace.channels[c];
                    for (std::size_t j = 0; j < kTaps; ++j) acc += ker.weights[c * kTaps + j] * x[t + j * ker.dilation];
                }
                const double relu = acc > 0.0 ? acc : 0.0;
                sum += relu;
                mx = std::max(mx, relu);
                ++count;
            }
            out[2 * k] = sum / static_cast<double>(count);
            out[2 * k + 1] = mx;
        }
        return out;
    }

private:
    struct Kernel {
        std::array<double, kEmbedChannels * kTaps> weights{};
        double bias = 0.0;
        std::size_t dilation = 1;
    };
    std::vector<Kernel> kernels_;
};

inline const SurrogateEncoder& surrogate_encoder() {
    static const SurrogateEncoder enc;
    return enc;
}

inline std::vector<double> embed_trace(const EcgTrace& trace) { return surrogate_encoder()(trace); }

/// Bridge from any stored segment to the encoder input: resample to 100 Hz
/// and 1000 samples (tiling short segments), then embed.
inline std::vector<double> embed_segment(const EcgTrace& segment) {
    if (segment.n_channels() != kEmbedChannels) {
        throw DataError("ECG segment must have 12 leads, got " + std::to_string(segment.n_channels()));
    }
    return embed_trace(resample_and_rescale(segment, 100.0, kEmbedSamples));
}

}  // namespace riskstrat
