#include "dclsnet/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace dclsnet {

std::optional<double> average_precision(const std::vector<float>& scores,
                                        const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("average_precision: size mismatch");
    const std::size_t n = scores.size();
    std::size_t positives = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument("average_precision: labels must be binary");
        positives += (std::size_t)l;
    }
    if (positives == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
        if (labels[order[rank]] == 1) {
            ++hits;
            ap += (double)hits / (double)(rank + 1);
        }
    }
    return ap / (double)positives;
}

double mean_average_precision(const EvalBuffer& buf) {
    if (buf.scores.shape != buf.labels.shape || buf.scores.rank() != 2)
        throw std::invalid_argument("mean_average_precision: buffer shape mismatch");
    const std::size_t N = buf.scores.dim(0), C = buf.scores.dim(1);
    double sum = 0.0;
    std::size_t counted = 0;
    std::vector<float> s(N);
    std::vector<int> l(N);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < N; ++i) {
            s[i] = buf.scores.at2(i, c);
            l[i] = (int)buf.labels.at2(i, c);
        }
        if (auto ap = average_precision(s, l)) {
            sum += *ap;
            ++counted;
        }
    }
    if (counted == 0) throw std::runtime_error("mean_average_precision: no class has positives");
    return sum / (double)counted;
}

std::vector<ClassReport> per_class_report(const EvalBuffer& buf,
                                          const std::vector<std::string>& class_names) {
    const std::size_t N = buf.scores.dim(0), C = buf.scores.dim(1);
    std::vector<ClassReport> report;
    std::vector<float> s(N);
    std::vector<int> l(N);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < N; ++i) {
            s[i] = buf.scores.at2(i, c);
            l[i] = (int)buf.labels.at2(i, c);
        }
        ClassReport r;
        r.class_index = (int)c;
        r.class_name = c < class_names.size() ? class_names[c] : "";
        r.positives = (int)std::accumulate(l.begin(), l.end(), 0);
        r.ap = average_precision(s, l);
        report.push_back(std::move(r));
    }
    return report;
}

void write_eval_report(const std::string& path, const std::vector<ClassReport>& report,
                       double map) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write eval report: " + path);
    f << "class,name,positives,ap\n";
    for (const auto& r : report) {
        f << r.class_index << "," << r.class_name << "," << r.positives << ",";
        if (r.ap) f << *r.ap;
        f << "\n";
    }
    f << "mAP,,," << map << "\n";
}

}  // namespace dclsnet
