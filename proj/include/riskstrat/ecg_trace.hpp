#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskstrat/common.hpp"

namespace riskstrat {

inline constexpr std::array<std::string_view, 12> kLeadNames = {
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

/// Multi-channel waveform in millivolts.
///
/// A full recording carries the twelve standard leads; single-lead traces
/// (as produced by raster extraction) carry one channel. `tiled` records that
/// resampling repeated the segment periodically to reach the requested length.
struct EcgTrace {
    std::vector<std::string> lead_names;
    std::vector<std::vector<double>> channels;
    double sample_rate = 0.0;
    std::string unit = "mV";
    bool tiled = false;
    std::vector<std::string> notes;

    std::size_t n_channels() const { return channels.size(); }
    std::size_t n_samples() const { return channels.empty() ? 0 : channels.front().size(); }
    double duration() const { return static_cast<double>(n_samples()) / sample_rate; }

    void validate() const {
        if (channels.empty()) throw DataError("ECG trace has no channels");
        if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
            throw DataError("ECG trace sample rate must be positive");
        }
        if (lead_names.size() != channels.size()) {
            throw DataError("ECG trace lead names do not match channel count");
        }
        for (std::size_t c = 0; c < channels.size(); ++c) {
            if (channels[c].size() != channels.front().size()) {
                throw DataError("ECG channel '" + lead_names[c] + "' has " +
                                std::to_string(channels[c].size()) + " samples, expected " +
                                std::to_string(channels.front().size()));
            }
            for (double v : channels[c]) {
                if (!std::isfinite(v)) {
                    throw DataError("ECG channel '" + lead_names[c] + "' contains a non-finite value");
                }
            }
        }
    }

    friend bool operator==(const EcgTrace&, const EcgTrace&) = default;
};

// CSV layout: header of lead names, then one row holding the sample rate in
// every column, then one row per sample.
inline void write_trace_csv(const EcgTrace& trace, std::ostream& out) {
    trace.validate();
    for (std::size_t c = 0; c < trace.n_channels(); ++c) {
        out << (c ? "," : "") << trace.lead_names[c];
    }
    out << '\n';
    for (std::size_t c = 0; c < trace.n_channels(); ++c) {
        out << (c ? "," : "") << format_double(trace.sample_rate);
    }
    out << '\n';
    for (std::size_t i = 0; i < trace.n_samples(); ++i) {
        for (std::size_t c = 0; c < trace.n_channels(); ++c) {
            out << (c ? "," : "") << format_double(trace.channels[c][i]);
        }
        out << '\n';
    }
}

inline EcgTrace read_trace_csv(std::istream& in, const std::string& origin = "<stream>") {
    EcgTrace trace;
    std::string line;
    if (!std::getline(in, line)) throw DataError(origin + ": empty trace file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    trace.lead_names = split(line, ',');
    trace.channels.assign(trace.lead_names.size(), {});
    if (!std::getline(in, line)) throw DataError(origin + ": missing sample-rate row");
    const auto rate_cells = split(line, ',');
    if (rate_cells.empty() || !parse_double(rate_cells.front(), trace.sample_rate)) {
        throw DataError(origin + ": invalid sample-rate row");
    }
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto cells = split(line, ',');
        if (cells.size() != trace.lead_names.size()) {
            throw DataError(origin + ": sample row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(trace.lead_names.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double v = 0.0;
            if (!parse_double(cells[c], v)) {
                throw DataError(origin + ": non-numeric sample at row " + std::to_string(row) +
                                ", lead '" + trace.lead_names[c] + "'");
            }
            trace.channels[c].push_back(v);
        }
    }
    trace.validate();
    return trace;
}

inline void save_trace_csv(const EcgTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write trace file " + path);
    write_trace_csv(trace, out);
}

inline EcgTrace load_trace_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open trace file " + path);
    return read_trace_csv(in, path);
}

inline nlohmann::json trace_to_json(const EcgTrace& trace) {
    nlohmann::json j;
    j["sample_rate"] = trace.sample_rate;
    j["unit"] = trace.unit;
    j["tiled"] = trace.tiled;
    j["notes"] = trace.notes;
    j["leads"] = nlohmann::json::object();
    j["lead_order"] = trace.lead_names;
    for (std::size_t c = 0; c < trace.n_channels(); ++c) {
        j["leads"][trace.lead_names[c]] = trace.channels[c];
    }
    return j;
}

inline EcgTrace trace_from_json(const nlohmann::json& j) {
    EcgTrace trace;
    trace.sample_rate = j.at("sample_rate").get<double>();
    trace.unit = j.value("unit", std::string("mV"));
    trace.tiled = j.value("tiled", false);
    trace.notes = j.value("notes", std::vector<std::string>{});
    trace.lead_names = j.at("lead_order").get<std::vector<std::string>>();
    for (const auto& name : trace.lead_names) {
        trace.channels.push_back(j.at("leads").at(name).get<std::vector<double>>());
    }
    trace.validate();
    return trace;
}

}  // namespace riskstrat
