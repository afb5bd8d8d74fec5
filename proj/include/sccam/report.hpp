#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sccam/errors.hpp"

namespace sccam {

// Run report: plain "key = value" text, one entry per line, insertion order.
// Doubles print as %.17g so identical runs produce identical bytes. Matrix
// blocks appear as one indexed key per row (metrics.confusion.<r> = a,b,...).
constexpr int kReportVersion = 1;

class ReportWriter {
public:
    ReportWriter() { add("report_version", static_cast<long long>(kReportVersion)); }

    void add(const std::string& key, const std::string& value) {
        lines_.push_back(key + " = " + value);
    }

    void add(const std::string& key, const char* value) { add(key, std::string(value)); }

    void add(const std::string& key, long long value) { add(key, std::to_string(value)); }
    void add(const std::string& key, int value) { add(key, std::to_string(value)); }
    void add(const std::string& key, std::uint64_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, bool value) { add(key, value ? "true" : "false"); }

    void add(const std::string& key, double value) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", value);
        add(key, std::string(buf));
    }

    void add(const std::string& key, const std::vector<double>& values) {
        std::string joined;
        char buf[40];
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", values[i]);
            if (i) joined += ',';
            joined += buf;
        }
        add(key, joined);
    }

    void add(const std::string& key, const std::vector<int>& values) {
        std::string joined;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) joined += ',';
            joined += std::to_string(values[i]);
        }
        add(key, joined);
    }

    std::string text() const {
        std::string out;
        for (const auto& l : lines_) {
            out += l;
            out += '\n';
        }
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("cannot write report '" + path + "'");
        out << text();
        if (!out) throw ConfigError("write failed for report '" + path + "'");
    }

private:
    std::vector<std::string> lines_;
};

} // namespace sccam
