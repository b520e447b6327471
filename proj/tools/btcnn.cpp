// btcnn: synthesize phantoms, train, evaluate and compare preprocessing
// variants from the command line.
//
// Exit codes: 0 success, 1 runtime or validation failure, 2 unparsable flags.

#include <cstdlib>
#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "btcnn/commands.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Tensors of 128 KB and up would otherwise be mmapped and unmapped on
    // every layer call; the page faults cost about a quarter of training time.
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
    using namespace btcnn::cli;

    CLI::App app{"Brain-tumour MRI grading with a from-scratch CNN"};
    app.require_subcommand(1);

    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a phantom dataset directory");
    synth_cmd->add_option("--out", synth.out, "Output dataset directory")->required();
    synth_cmd->add_option("--per-class", synth.per_class, "Records per class")->capture_default_str();
    synth_cmd->add_option("--size", synth.size, "Phantom image side in pixels")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train one (variant, size) model");
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--variant", train.variant, "uncropped | cropped | segmented")->capture_default_str();
    train_cmd->add_option("--size", train.size, "Input side: 32, 64 or 128")->capture_default_str();
    train_cmd->add_option("--iters", train.iters, "ADAM iterations")->capture_default_str();
    train_cmd->add_option("--batch", train.batch, "Minibatch size")->capture_default_str();
    train_cmd->add_option("--lr", train.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--seed", train.seed, "Split, init and batch-order seed")->capture_default_str();
    train_cmd->add_option("--eval-every", train.eval_every, "History interval in iterations")->capture_default_str();
    train_cmd->add_option("--out", train.out, "Checkpoint file")->required();
    train_cmd->add_option("--history", train.history, "History CSV file")->required();

    EvalOptions eval;
    long long eval_size = 0;
    std::string eval_variant;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one partition");
    eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
    eval_cmd->add_option("--model", eval.model, "Checkpoint file")->required();
    eval_cmd->add_option("--split", eval.split, "train | validation | test")->capture_default_str();
    eval_cmd->add_option("--report", eval.report, "Metrics JSON file")->required();
    eval_cmd->add_option("--cm", eval.cm, "Confusion-matrix CSV file")->required();
    auto* eval_size_opt = eval_cmd->add_option("--size", eval_size, "Expected input size (checked against the checkpoint)");
    auto* eval_variant_opt = eval_cmd->add_option("--variant", eval_variant, "Expected variant (checked against the checkpoint)");

    CompareOptions compare;
    auto* compare_cmd = app.add_subcommand("compare", "Train and test all 9 (variant, size) cells");
    compare_cmd->add_option("--data", compare.data, "Dataset directory")->required();
    compare_cmd->add_option("--seed", compare.seed, "Shared seed")->capture_default_str();
    compare_cmd->add_option("--iters", compare.iters, "ADAM iterations per cell")->capture_default_str();
    compare_cmd->add_option("--batch", compare.batch, "Minibatch size")->capture_default_str();
    compare_cmd->add_option("--lr", compare.lr, "Learning rate")->capture_default_str();
    compare_cmd->add_option("--out", compare.out, "Report file (Markdown)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth_cmd) run_synth(synth, std::cout);
        if (*train_cmd) run_train(train, std::cout);
        if (*eval_cmd) {
            if (*eval_size_opt) eval.size = eval_size;
            if (*eval_variant_opt) eval.variant = eval_variant;
            run_eval(eval, std::cout);
        }
        if (*compare_cmd) run_compare(compare, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
