#include "spray/backend.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spray {

using nlohmann::json;

const char* slice_status_name(SliceStatus s) {
    switch (s) {
        case SliceStatus::kOk: return "OK";
        case SliceStatus::kFailed: return "FAILED";
        case SliceStatus::kTimeout: return "TIMEOUT";
    }
    return "?";
}

const char* fault_effect_name(FaultEffect e) {
    switch (e) {
        case FaultEffect::kDown: return "down";
        case FaultEffect::kDegrade: return "degrade";
        case FaultEffect::kJitter: return "jitter";
        case FaultEffect::kDropCompletion: return "drop_completion";
    }
    return "?";
}

static std::optional<FaultEffect> fault_effect_from(const std::string& s) {
    if (s == "down") return FaultEffect::kDown;
    if (s == "degrade") return FaultEffect::kDegrade;
    if (s == "jitter") return FaultEffect::kJitter;
    if (s == "drop_completion") return FaultEffect::kDropCompletion;
    return std::nullopt;
}

FaultSchedule FaultSchedule::parse(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("fault schedule parse error: ") + e.what());
    }
    FaultSchedule out;
    for (const json& jf : doc.at("faults")) {
        FaultEntry f;
        f.rail = jf.at("rail").get<std::string>();
        auto eff = fault_effect_from(jf.at("effect").get<std::string>());
        if (!eff) throw ConfigError("fault schedule: unknown effect");
        f.effect = *eff;
        f.start = static_cast<Nanos>(jf.at("start_ms").get<double>() * 1e6);
        f.end = static_cast<Nanos>(jf.at("end_ms").get<double>() * 1e6);
        f.factor = jf.value("factor", 1.0);
        f.jitter_us = jf.value("jitter_us", 0.0);
        out.entries.push_back(std::move(f));
    }
    out.validate();
    return out;
}

FaultSchedule FaultSchedule::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fault schedule: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void FaultSchedule::validate() const {
    for (const FaultEntry& f : entries) {
        if (f.end <= f.start) throw ConfigError("fault schedule: empty interval for " + f.rail);
        if (f.effect == FaultEffect::kDegrade && (f.factor <= 0.0 || f.factor > 1.0))
            throw ConfigError("fault schedule: degrade factor must be in (0, 1]");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (std::size_t j = i + 1; j < entries.size(); ++j) {
            const FaultEntry& a = entries[i];
            const FaultEntry& b = entries[j];
            if (a.rail == b.rail && a.effect == b.effect && a.start < b.end && b.start < a.end)
                throw ConfigError("fault schedule: overlapping intervals for (" + a.rail + ", " +
                                  fault_effect_name(a.effect) + ")");
        }
    }
}

}  // namespace spray
