#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmarket/core_model.hpp"
#include "qmarket/io.hpp"

namespace qmarket {

// One observed per-client transition across a decision period.
struct TransitionRecord {
    double t = 0.0;  // decision-period start time, seconds
    int client_id = 0;
    int s = 0;       // label before the period
    int a = 0;       // 0 = lose, 1 = win
    int s_next = 0;  // label after the period
};

// Empirical per-client transition model P(s' | s, a), shared by every client.
// Unseen (s, a) pairs fall back to a self-loop so lookups always return a
// proper distribution.
class TransitionKernel {
public:
    TransitionKernel() = default;
    explicit TransitionKernel(int num_labels) : num_labels_(num_labels) {
        if (num_labels <= 0) throw std::invalid_argument("kernel: num_labels must be positive");
        rows_.resize(static_cast<std::size_t>(num_labels) * 2);
        observed_.assign(rows_.size(), false);
        for (int s = 0; s < num_labels; ++s)
            for (int a = 0; a < 2; ++a) rows_[index(s, a)] = {{s, 1.0}};
    }

    int num_labels() const { return num_labels_; }

    bool observed(int s, int a) const { return observed_.at(index(s, a)); }

    int observed_pairs() const {
        int n = 0;
        for (bool b : observed_)
            if (b) ++n;
        return n;
    }

    // Sparse row, ascending next-label order, probabilities summing to one.
    const std::vector<std::pair<int, double>>& row(int s, int a) const {
        return rows_.at(index(s, a));
    }

    void set_row(int s, int a, std::vector<std::pair<int, double>> r, bool from_data) {
        rows_.at(index(s, a)) = std::move(r);
        observed_.at(index(s, a)) = from_data;
    }

    double expectation(int s, int a, const std::vector<double>& f) const {
        double e = 0.0;
        for (const auto& [sn, p] : row(s, a)) e += p * f.at(sn);
        return e;
    }

private:
    std::size_t index(int s, int a) const {
        if (s < 0 || s >= num_labels_ || a < 0 || a > 1)
            throw std::out_of_range("kernel: (s,a) outside the state-action space");
        return static_cast<std::size_t>(s) * 2 + static_cast<std::size_t>(a);
    }

    int num_labels_ = 0;
    std::vector<std::vector<std::pair<int, double>>> rows_;
    std::vector<bool> observed_;
};

// Maximum-likelihood fit: counts normalized per (s, a). No smoothing; rows for
// pairs never seen keep the self-loop fallback.
inline TransitionKernel fit_kernel(const std::vector<TransitionRecord>& records, int num_labels) {
    if (records.empty()) throw std::invalid_argument("fit_kernel: no records");
    TransitionKernel k(num_labels);
    std::map<std::pair<int, int>, std::map<int, long>> counts;
    for (const auto& r : records) {
        if (r.s < 0 || r.s >= num_labels || r.s_next < 0 || r.s_next >= num_labels)
            throw std::out_of_range("fit_kernel: label outside [0, num_labels)");
        if (r.a != 0 && r.a != 1) throw std::invalid_argument("fit_kernel: action must be 0 or 1");
        counts[{r.s, r.a}][r.s_next] += 1;
    }
    for (const auto& [sa, nexts] : counts) {
        long total = 0;
        for (const auto& [sn, c] : nexts) total += c;
        std::vector<std::pair<int, double>> row;
        row.reserve(nexts.size());
        for (const auto& [sn, c] : nexts)
            row.emplace_back(sn, static_cast<double>(c) / static_cast<double>(total));
        k.set_row(sa.first, sa.second, std::move(row), true);
    }
    return k;
}

inline const std::vector<std::pair<int, double>>& kernel_lookup(const TransitionKernel& k, int s,
                                                                int a) {
    return k.row(s, a);
}

// Text form: one "s a s_next prob" line per nonzero entry, fitted rows only.
inline std::string serialize_kernel(const TransitionKernel& k) {
    std::ostringstream out;
    out << "# s a s_next prob\n";
    out << "labels " << k.num_labels() << "\n";
    for (int s = 0; s < k.num_labels(); ++s)
        for (int a = 0; a < 2; ++a) {
            if (!k.observed(s, a)) continue;
            for (const auto& [sn, p] : k.row(s, a))
                out << s << " " << a << " " << sn << " " << fmt_double(p) << "\n";
        }
    return out.str();
}

inline TransitionKernel parse_kernel(const std::vector<std::string>& lines) {
    int num_labels = -1;
    std::map<std::pair<int, int>, std::vector<std::pair<int, double>>> rows;
    for (const auto& line : lines) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string head;
        ss >> head;
        if (head == "labels") {
            ss >> num_labels;
            continue;
        }
        const int s = static_cast<int>(parse_long(head));
        int a, sn;
        std::string prob;
        if (!(ss >> a >> sn >> prob)) throw std::runtime_error("kernel: malformed line '" + line + "'");
        rows[{s, a}].emplace_back(sn, parse_double(prob));
    }
    if (num_labels <= 0) throw std::runtime_error("kernel: missing labels header");
    TransitionKernel k(num_labels);
    for (auto& [sa, row] : rows) {
        std::sort(row.begin(), row.end());
        k.set_row(sa.first, sa.second, std::move(row), true);
    }
    return k;
}

inline void save_kernel(const TransitionKernel& k, const std::filesystem::path& p) {
    write_text_file(p, serialize_kernel(k));
}

inline TransitionKernel load_kernel(const std::filesystem::path& p) {
    return parse_kernel(read_lines(p));
}

// Trace CSV: t,client_id,s,a,s_next
inline std::string serialize_traces(const std::vector<TransitionRecord>& records) {
    std::ostringstream out;
    out << "t,client_id,s,a,s_next\n";
    for (const auto& r : records)
        out << fmt_double(r.t) << "," << r.client_id << "," << r.s << "," << r.a << "," << r.s_next
            << "\n";
    return out.str();
}

inline std::vector<TransitionRecord> parse_traces(const std::vector<std::string>& lines) {
    std::vector<TransitionRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split(lines[i], ',');
        if (f.size() != 5) throw std::runtime_error("trace: malformed row '" + lines[i] + "'");
        TransitionRecord r;
        r.t = parse_double(f[0]);
        r.client_id = static_cast<int>(parse_long(f[1]));
        r.s = static_cast<int>(parse_long(f[2]));
        r.a = static_cast<int>(parse_long(f[3]));
        r.s_next = static_cast<int>(parse_long(f[4]));
        out.push_back(r);
    }
    return out;
}

}  // namespace qmarket
