#pragma once

#include "unportrait/undistort.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace unportrait {

// Model bundle: "<stem>.updm" parameter blob beside "<stem>.meta" (kind
// "model-meta") recording the architecture hyperparameters, so a checkpoint
// directory is self-describing. Loaders throw std::invalid_argument when the
// bundle is absent and std::runtime_error on corrupt contents.
void save_flownet_bundle(const std::filesystem::path& dir, FlowNetModel& model);
FlowNetModel load_flownet_bundle(const std::filesystem::path& dir);
void save_completion_bundle(const std::filesystem::path& dir, CompletionModel& model);
CompletionModel load_completion_bundle(const std::filesystem::path& dir);
void save_classifier_bundle(const std::filesystem::path& dir, ClassifierModel& model);
ClassifierModel load_classifier_bundle(const std::filesystem::path& dir);

// Command-line entry: synth, preprocess, train-flownet, train-completion,
// train-classifier, estimate, undistort, eval, calibrate-color,
// calibrate-align. Returns 0 on success, 1 on validation/usage errors, 2 on
// runtime failures. Identical inputs and seeds give byte-identical outputs.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace unportrait
