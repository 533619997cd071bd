#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "riskstrat/ecg.hpp"

using namespace riskstrat;

namespace {

EcgTrace single(std::vector<double> x, double rate) {
    EcgTrace t;
    t.lead_names = {"II"};
    t.channels = {std::move(x)};
    t.sample_rate = rate;
    return t;
}

EcgTrace twelve(double rate, std::size_t n, double (*f)(std::size_t, std::size_t)) {
    EcgTrace t;
    t.sample_rate = rate;
    for (std::size_t c = 0; c < kEmbedChannels; ++c) {
        t.lead_names.push_back("L" + std::to_string(c));
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = f(c, i);
        t.channels.push_back(std::move(x));
    }
    return t;
}

std::vector<double> sine(std::size_t n, double rate, double hz, double amp, double offset = 0.0) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = offset + amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
    return x;
}

}  // namespace

TEST(Render, FlatLineExtractsAsZero) {
    // 250 px/s at the default pitch, so 250 Hz is one sample per column.
    const auto img = render_trace(single(std::vector<double>(250, 0.0), 250.0), RenderCalibration{});
    const auto t = extract_trace(img, TraceExtractionConfig{});
    ASSERT_EQ(t.n_samples(), 250u);
    EXPECT_DOUBLE_EQ(t.sample_rate, 250.0);
    for (double v : t.channels[0]) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Render, SineRoundTrip) {
    const auto x = sine(500, 250.0, 2.0, 1.0);
    const auto img = render_trace(single(x, 250.0), RenderCalibration{});
    EXPECT_TRUE(img.notes.empty());
    const auto t = extract_trace(img, TraceExtractionConfig{});
    ASSERT_EQ(t.n_samples(), x.size());
    double sse = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = t.channels[0][i] - x[i];
        sse += e * e;
        worst = std::max(worst, std::abs(e));
    }
    // One pixel is 0.01 mV.
    EXPECT_LT(std::sqrt(sse / x.size()), 0.02);
    EXPECT_LT(worst, 0.05);
}

TEST(Render, WhiteImageHasNoTrace) {
    EXPECT_THROW(extract_trace(RasterImage(100, 50), TraceExtractionConfig{}), NoTraceFound);
}

TEST(Render, ClippingIsNoted) {
    const auto img = render_trace(single(sine(200, 250.0, 2.0, 5.0), 250.0), RenderCalibration{});
    ASSERT_EQ(img.notes.size(), 1u);
    EXPECT_NE(img.notes[0].find("clipped"), std::string::npos);
}

TEST(Render, VerticalOffsetShiftsExtraction) {
    const auto x = sine(300, 250.0, 3.0, 0.4);
    const auto base = extract_trace(render_trace(single(x, 250.0), RenderCalibration{}), TraceExtractionConfig{});
    std::vector<double> shifted(x);
    for (auto& v : shifted) v += 0.3;
    const auto up = extract_trace(render_trace(single(shifted, 250.0), RenderCalibration{}), TraceExtractionConfig{});
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(up.channels[0][i], base.channels[0][i] + 0.3, 1e-9);
}

TEST(Render, ExtractionIsDeterministic) {
    const auto img = render_trace(single(sine(300, 250.0, 5.0, 0.8), 250.0), RenderCalibration{});
    TraceExtractionConfig cfg;
    cfg.rng_seed = 9;
    EXPECT_EQ(extract_trace(img, cfg).channels, extract_trace(img, cfg).channels);
}

TEST(Render, PgmRoundTripKeepsCalibrationAndBoxes) {
    auto img = render_trace(single(sine(120, 250.0, 2.0, 0.5), 250.0), RenderCalibration{});
    img.mm_per_px_y = 0.05;
    std::stringstream ss;
    write_pgm(img, ss);
    const auto back = read_pgm(ss);
    EXPECT_EQ(back.width, img.width);
    EXPECT_EQ(back.height, img.height);
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_DOUBLE_EQ(back.mm_per_px_y, 0.05);
    ASSERT_EQ(back.leads.size(), 1u);
    EXPECT_EQ(back.leads[0].lead, "II");
    EXPECT_EQ(back.leads[0].baseline_row, img.leads[0].baseline_row);
}

TEST(Render, MalformedPgmIsDataError) {
    std::stringstream ss("P2\n3 3\n255\n");
    EXPECT_THROW(read_pgm(ss), DataError);
}

TEST(Resample, SameRateAndLengthIsBitwiseIdentity) {
    const auto x = sine(1000, 100.0, 1.3, 0.7, 0.1);
    const auto t = resample_and_rescale(single(x, 100.0), 100.0, 1000);
    EXPECT_EQ(t.channels[0], x);
    EXPECT_FALSE(t.tiled);
}

TEST(Resample, ConstantIsPreserved) {
    const auto t = resample_and_rescale(single(std::vector<double>(142, 0.5), 57.0), 100.0, 1000);
    EXPECT_TRUE(t.tiled);
    for (double v : t.channels[0]) EXPECT_EQ(v, 0.5);
}

TEST(Resample, SlowSineMatchesAnalyticValues) {
    const auto t = resample_and_rescale(single(sine(600, 57.0, 1.0, 1.0), 57.0), 100.0, 1000);
    EXPECT_FALSE(t.tiled);
    for (std::size_t k = 0; k < 1000; ++k) EXPECT_NEAR(t.channels[0][k], std::sin(2.0 * std::numbers::pi * k / 100.0), 0.01);
}

TEST(Resample, GainIsApplied) {
    const auto t = resample_and_rescale(single({1.0, 2.0}, 1.0), 1.0, 2, 0.5);
    EXPECT_EQ(t.channels[0], (std::vector<double>{0.5, 1.0}));
}

TEST(Embed, ZeroTraceGoldenValue) {
    const auto z = embed_trace(twelve(100.0, kEmbedSamples, [](std::size_t, std::size_t) { return 0.0; }));
    ASSERT_EQ(z.size(), 128u);
    // With zero input every window sees only the bias, so mean and max agree.
    double total = 0.0;
    for (std::size_t k = 0; k < 64; ++k) {
        EXPECT_NEAR(z[2 * k], z[2 * k + 1], 1e-15);
        EXPECT_GE(z[2 * k], 0.0);
        total += z[2 * k];
    }
    // Oracle: replay the encoder's seeded draws and keep only the biases.
    Rng rng(SurrogateEncoder::kSeed);
    double relu_bias = 0.0;
    for (std::size_t k = 0; k < 64; ++k) {
        for (std::size_t w = 0; w < kEmbedChannels * SurrogateEncoder::kTaps; ++w) rng.uniform(-1.0, 1.0);
        relu_bias += std::max(0.0, rng.uniform(-0.05, 0.05));
    }
    EXPECT_NEAR(total, relu_bias, 1e-12);
    EXPECT_NEAR(total, 0.65872999112573227, 1e-12);
}

TEST(Embed, DeterministicAndLipschitz) {
    const auto a = twelve(100.0, kEmbedSamples, [](std::size_t c, std::size_t i) { return std::sin(0.05 * (c + 1) * i); });
    auto b = a;
    Rng rng(4);
    for (auto& ch : b.channels) {
        for (auto& v : ch) v += rng.uniform(-0.01, 0.01);
    }
    const auto ea = embed_trace(a), eb = embed_trace(b);
    EXPECT_EQ(ea, embed_trace(a));
    for (std::size_t k = 0; k < ea.size(); ++k) EXPECT_LE(std::abs(ea[k] - eb[k]), 0.01 + 1e-12);
}

TEST(Embed, WrongShapeIsRejected) {
    const auto t = twelve(100.0, 999, [](std::size_t, std::size_t) { return 0.0; });
    try {
        embed_trace(t);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("(12, 999)"), std::string::npos);
    }
    EcgTrace eleven = twelve(100.0, kEmbedSamples, [](std::size_t, std::size_t) { return 0.0; });
    eleven.channels.pop_back();
    eleven.lead_names.pop_back();
    EXPECT_THROW(embed_segment(eleven), DataError);
}

TEST(Embed, ShortSegmentIsTiledBeforeEmbedding) {
    const auto seg = twelve(57.0, 142, [](std::size_t c, std::size_t i) { return 0.1 * c * std::cos(0.2 * i); });
    EXPECT_EQ(embed_segment(seg), embed_trace(resample_and_rescale(seg, 100.0, kEmbedSamples)));
}

TEST(Trace, CsvRoundTrip) {
    const auto t = twelve(57.0, 20, [](std::size_t c, std::size_t i) { return 0.123456789 * c - 0.01 * i; });
    std::stringstream ss;
    write_trace_csv(t, ss);
    const auto back = read_trace_csv(ss);
    EXPECT_EQ(back.lead_names, t.lead_names);
    EXPECT_EQ(back.channels, t.channels);
    EXPECT_DOUBLE_EQ(back.sample_rate, 57.0);
}
