#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dclsnet/tensor.hpp"

namespace dclsnet {

struct EvalBuffer {
    Tensor scores;  // N x C
    Tensor labels;  // N x C, entries in {0, 1}
};

// Rank-precision AP: sort by descending score (ties broken by original index),
// AP = sum over positive ranks k of precision@k, divided by #positives.
// Returns nullopt when there are no positives.
std::optional<double> average_precision(const std::vector<float>& scores,
                                        const std::vector<int>& labels);

// Mean of per-class AP over classes with at least one positive.
double mean_average_precision(const EvalBuffer& buf);

struct ClassReport {
    int class_index;
    std::string class_name;
    int positives;
    std::optional<double> ap;
};

std::vector<ClassReport> per_class_report(const EvalBuffer& buf,
                                          const std::vector<std::string>& class_names);

// CSV: class index, class name, positives, AP; final row is the mAP.
void write_eval_report(const std::string& path, const std::vector<ClassReport>& report,
                       double map);

}  // namespace dclsnet
