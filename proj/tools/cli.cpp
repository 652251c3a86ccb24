#include "tdlm/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "tdlm/checkpoint.hpp"
#include "tdlm/distill.hpp"
#include "tdlm/errors.hpp"
#include "tdlm/gradcheck_suite.hpp"
#include "tdlm/jsonl.hpp"
#include "tdlm/metrics.hpp"
#include "tdlm/parallel.hpp"
#include "tdlm/paraphrase.hpp"
#include "tdlm/synthetic.hpp"
#include "tdlm/training.hpp"
#include "tdlm/wsd.hpp"

namespace tdlm::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool same_kind(const json& a, const json& b)
{
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

std::string join_path(const std::string& prefix, const std::string& key)
{
    return prefix.empty() ? key : prefix + "." + key;
}

void collect_leaves(const json& tree, const std::string& prefix, std::vector<std::string>& out)
{
    for (const auto& [key, value] : tree.items()) {
        const std::string path = join_path(prefix, key);
        if (value.is_object()) collect_leaves(value, path, out);
        else out.push_back(path);
    }
}

std::vector<std::string> split_path(const std::string& path)
{
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    return parts;
}

} // namespace

void merge_config(json& base, const json& patch, const std::string& prefix)
{
    if (!patch.is_object()) throw ConfigError("config" + (prefix.empty() ? "" : " at " + prefix) + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = join_path(prefix, key);
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        json& target = base[key];
        if (target.is_object()) {
            merge_config(target, value, path);
            continue;
        }
        if (!same_kind(target, value)) {
            throw ConfigError("config key '" + path + "' expects " + std::string(target.type_name()) + ", got " +
                              value.type_name());
        }
        if (target.is_number_integer() && !value.is_number_integer()) {
            throw ConfigError("config key '" + path + "' expects an integer");
        }
        if (target.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
            throw ConfigError("config key '" + path + "' must be non-negative");
        }
        target = value;
    }
}

std::vector<std::string> leaf_paths(const json& tree)
{
    std::vector<std::string> out;
    collect_leaves(tree, "", out);
    return out;
}

std::string flag_name(const std::string& path)
{
    std::string name = path;
    std::replace(name.begin(), name.end(), '_', '-');
    return name;
}

json parse_flag_value(const json& current, const std::string& text, const std::string& path)
{
    if (current.is_string()) return text;
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        throw ConfigError("--" + flag_name(path) + ": cannot parse '" + text + "' as " + current.type_name());
    }
    json wrapper = json::object();
    wrapper["v"] = current;
    json patch = json::object();
    patch["v"] = value;
    merge_config(wrapper, patch, path);
    return wrapper["v"];
}

const json& at_path(const json& tree, const std::string& path)
{
    const json* node = &tree;
    for (const auto& part : split_path(path)) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError("missing config key '" + path + "'");
        node = &node->at(part);
    }
    return *node;
}

json& at_path(json& tree, const std::string& path)
{
    json* node = &tree;
    for (const auto& part : split_path(path)) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError("missing config key '" + path + "'");
        node = &node->at(part);
    }
    return *node;
}

namespace {

// ---- typed config access ----

std::string str(const json& c, const std::string& path) { return at_path(c, path).get<std::string>(); }
double num(const json& c, const std::string& path) { return at_path(c, path).get<double>(); }
bool flag(const json& c, const std::string& path) { return at_path(c, path).get<bool>(); }

std::size_t count(const json& c, const std::string& path)
{
    const json& v = at_path(c, path);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(path + " must be a non-negative integer");
    return v.get<std::size_t>();
}

std::string require_path(const json& c, const std::string& key)
{
    std::string value = str(c, key);
    if (value.empty()) throw ConfigError("--" + flag_name(key) + " is required");
    return value;
}

// ---- default trees ----

json model_defaults(std::size_t layers)
{
    return {{"layers", layers},  {"hidden", 64},        {"heads", 4},         {"ff", 256},
            {"max_seq", 128},    {"dropout", 0.1},      {"attention", "full"}, {"window", 0},
            {"global_positions", json::array()},        {"init_std", 0.02}};
}

json train_defaults()
{
    return {{"max_steps", 1000}, {"batch_size", 16},  {"accumulation", 1}, {"seq_len", 32},
            {"lr", 1e-3},        {"beta1", 0.9},      {"beta2", 0.999},    {"eps", 1e-8},
            {"weight_decay", 0.01}, {"mask_prob", 0.15}, {"val_every", 100}, {"prefetch", 4}};
}

json optim_defaults(double lr)
{
    return {{"lr", lr}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}, {"weight_decay", 0.01}};
}

json corpus_defaults()
{
    return {{"corpus", ""},
            {"tokenizer", ""},
            {"validation", ""},
            {"holdout_documents", 100},
            {"validation_batch_size", 32},
            {"validation_mask_seed", 1234}};
}

json with_common(json tree)
{
    tree["seed"] = 0;
    tree["threads"] = 1;
    tree["out_dir"] = "out";
    return tree;
}

ModelConfig model_config(const json& j, std::size_t vocab_size)
{
    json copy = j;
    copy["vocab_size"] = vocab_size;
    ModelConfig config = model_config_from_json(copy);
    config.validate();
    return config;
}

AdamWConfig optim_config(const json& j)
{
    return {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
            j.at("eps").get<double>(), j.at("weight_decay").get<double>()};
}

TrainConfig train_config(const json& c, std::uint64_t seed)
{
    TrainConfig t;
    t.max_steps = count(c, "max_steps");
    t.batch_size = count(c, "batch_size");
    t.accumulation = count(c, "accumulation");
    t.seq_len = count(c, "seq_len");
    t.optim = optim_config(c);
    t.mask_prob = num(c, "mask_prob");
    t.val_every = count(c, "val_every");
    t.prefetch = count(c, "prefetch");
    t.seed = seed;
    return t;
}

// ---- run directory ----

class LockError : public Error {
    using Error::Error;
};

class DirLock {
public:
    explicit DirLock(fs::path path) : path_(std::move(path))
    {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            if (errno == EEXIST) throw LockError("output directory is locked by another run: " + path_.string());
            throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
        }
    }
    ~DirLock()
    {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

struct Run {
    json config;
    fs::path dir;
    std::ostream& out;
    std::ofstream log;

    std::uint64_t seed() const { return config.at("seed").get<std::uint64_t>(); }

    // Timestamps go to run.log only so every other output stays reproducible.
    void note(const std::string& message)
    {
        out << message << '\n';
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << message << std::endl;
    }
};

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

std::string fmt(double v)
{
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

Tokenizer load_tokenizer(const json& c)
{
    return Tokenizer::load(require_path(c, "tokenizer"));
}

Model load_model(const fs::path& path, const Tokenizer* tokenizer)
{
    Checkpoint ck = load_checkpoint(path);
    if (tokenizer) {
        if (ck.model.config.vocab_size != tokenizer->vocab_size()) {
            throw ConfigError(path.string() + ": vocabulary size differs from the tokenizer");
        }
        if (ck.model.vocab_hash != 0 && ck.model.vocab_hash != tokenizer->vocab().hash()) {
            throw ConfigError(path.string() + ": trained with a different tokenizer");
        }
    }
    return std::move(ck.model);
}

struct CorpusSplit {
    std::vector<Document> train;
    std::vector<Document> validation;
};

CorpusSplit load_split(const json& c, const Tokenizer& tokenizer)
{
    auto docs = read_corpus(require_path(c, "corpus"));
    CorpusSplit split;
    if (!str(c, "validation").empty()) {
        split.validation = load_corpus(str(c, "validation"), tokenizer);
    } else {
        const std::size_t holdout = count(c, "holdout_documents");
        if (holdout >= docs.size()) throw ConfigError("holdout_documents leaves no training documents");
        const std::vector<TextDocument> held(docs.end() - static_cast<std::ptrdiff_t>(holdout), docs.end());
        docs.resize(docs.size() - holdout);
        split.validation = tokenize_corpus(held, tokenizer);
    }
    split.train = tokenize_corpus(docs, tokenizer);
    return split;
}

std::vector<MaskedBatch> validation_batches(const json& c, const std::vector<Document>& docs, std::size_t seq_len,
                                            double mask_prob, std::size_t vocab)
{
    if (docs.empty()) return {};
    return make_validation_batches(docs, seq_len, count(c, "validation_batch_size"), mask_prob,
                                   at_path(c, "validation_mask_seed").get<std::uint64_t>(), vocab);
}

void report_losses(Run& run, const std::vector<LossRecord>& records)
{
    write_loss_csv(run.dir / "loss.csv", records);
    for (const auto& r : records)
        if (r.val_ce) run.note("step " + std::to_string(r.step) + " val_ce " + fmt(*r.val_ce));
}

// ---- commands ----

int cmd_tokenizer_train(Run& run)
{
    const auto docs = read_corpus(require_path(run.config, "corpus"));
    const Tokenizer tok = Tokenizer::train(corpus_lines(docs), count(run.config, "vocab_size"));
    tok.save(run.dir / "tokenizer");
    run.note("tokenizer: " + std::to_string(tok.vocab_size()) + " entries, " + std::to_string(tok.merges().size()) +
             " merges");
    return 0;
}

int cmd_pretrain_mlm(Run& run)
{
    const json& c = run.config;
    const Tokenizer tok = load_tokenizer(c);
    const CorpusSplit split = load_split(c, tok);
    const TrainConfig train = train_config(c.at("train"), run.seed());
    Model model = str(c, "init").empty() ? make_model(model_config(c.at("model"), tok.vocab_size()), run.seed())
                                         : load_model(str(c, "init"), &tok);
    model.vocab_hash = tok.vocab().hash();
    const auto val = validation_batches(c, split.validation, train.seq_len, train.mask_prob, tok.vocab_size());
    run.note("pretraining on " + std::to_string(split.train.size()) + " documents");
    const auto records = train_mlm(model, split.train, val, train);
    report_losses(run, records);
    save_checkpoint(run.dir / "model.tdlm", model, train.max_steps);
    return 0;
}

WeightingMode weighting_from_name(const std::string& name)
{
    if (name == "confidence") return WeightingMode::confidence;
    if (name == "paper-literal") return WeightingMode::paper_literal;
    throw ConfigError("unknown weighting '" + name + "' (confidence, paper-literal)");
}

int cmd_distill(Run& run)
{
    const json& c = run.config;
    const std::string init = str(c, "student.init");
    const std::size_t max_steps = count(c, "train.max_steps");
    if (max_steps == 0 && init != "teacher" && init != "scratch") {
        // Nothing to train: the input checkpoint is the result.
        fs::copy_file(init, run.dir / "student.tdlm", fs::copy_options::overwrite_existing);
        run.note("max_steps is 0; copied " + init);
        return 0;
    }
    const Tokenizer tok = load_tokenizer(c);
    std::vector<Model> teachers;
    for (const auto& path : at_path(c, "teachers")) teachers.push_back(load_model(path.get<std::string>(), &tok));
    if (teachers.empty()) throw ConfigError("--teachers needs at least one checkpoint");
    TeacherSet set;
    for (const auto& t : teachers) set.teachers.push_back(&t);

    Model base;
    if (init == "teacher") base = init_student_from(teachers.front());
    else if (init == "scratch") base = make_model(model_config(c.at("student").at("model"), tok.vocab_size()), run.seed());
    else base = load_model(init, &tok);
    base.vocab_hash = tok.vocab().hash();
    set.validate(base);

    DistillConfig config;
    config.temperature = num(c, "distill.temperature");
    config.ground_truth_step = count(c, "distill.ground_truth_step");
    config.feature_weight = num(c, "distill.feature_weight");
    config.weighting = weighting_from_name(str(c, "distill.weighting"));
    config.train = train_config(c.at("train"), run.seed());
    config.threads = count(c, "threads");
    config.validate();

    const CorpusSplit split = load_split(c, tok);
    const auto val = validation_batches(c, split.validation, config.train.seq_len, config.train.mask_prob,
                                        tok.vocab_size());
    Student student = make_student(std::move(base), set.hidden(), run.seed());
    run.note("distilling from " + std::to_string(teachers.size()) + " teachers");
    const auto records = train_distill(student, set, split.train, val, config);
    report_losses(run, records);
    Checkpoint ck{student.model, max_steps, {}};
    if (student.projection.defined()) ck.extras.emplace("projection", student.projection);
    save_checkpoint(run.dir / "student.tdlm", ck);
    return 0;
}

int cmd_eval_ppl(Run& run)
{
    const json& c = run.config;
    const Tokenizer tok = load_tokenizer(c);
    const Model model = load_model(require_path(c, "checkpoint"), &tok);
    const auto docs = load_corpus(require_path(c, "corpus"), tok);
    const auto batches = make_validation_batches(docs, count(c, "seq_len"), count(c, "batch_size"),
                                                 num(c, "mask_prob"), at_path(c, "mask_seed").get<std::uint64_t>(),
                                                 tok.vocab_size());
    const ValidationResult r = validate_ce(model, batches);
    write_text(run.dir / "eval.csv", "tokens,ce,ppl\n" + std::to_string(r.tokens) + "," + fmt(r.ce) + "," + fmt(r.ppl) + "\n");
    run.note("tokens " + std::to_string(r.tokens) + " ce " + fmt(r.ce) + " ppl " + fmt(r.ppl));
    return 0;
}

int cmd_wsd_train(Run& run)
{
    const json& c = run.config;
    const Tokenizer tok = load_tokenizer(c);
    const SenseInventory inventory = load_sense_inventory(require_path(c, "inventory"));
    const auto instances = load_wsd_instances(require_path(c, "instances"));
    Model model = str(c, "init").empty() ? make_model(model_config(c.at("model"), tok.vocab_size()), run.seed())
                                         : load_model(str(c, "init"), &tok);
    model.vocab_hash = tok.vocab().hash();

    WsdTrainConfig config;
    const std::string objective = str(c, "wsd.objective");
    if (objective == "lmgc") config.objective = WsdObjective::lmgc;
    else if (objective == "lmgc-m") config.objective = WsdObjective::lmgcm;
    else throw ConfigError("unknown objective '" + objective + "' (lmgc, lmgc-m)");
    config.epochs = count(c, "wsd.epochs");
    config.candidates = count(c, "wsd.candidates");
    config.instances_per_step = count(c, "wsd.instances_per_step");
    config.gamma = num(c, "wsd.gamma");
    config.alpha = num(c, "wsd.alpha");
    config.paper_literal_focal = flag(c, "wsd.paper_literal_focal");
    const std::string reduction = str(c, "wsd.mlm_reduction");
    if (reduction == "sum") config.mlm_reduction = MlmReduction::sum;
    else if (reduction == "mean") config.mlm_reduction = MlmReduction::mean;
    else throw ConfigError("unknown mlm_reduction '" + reduction + "' (sum, mean)");
    config.mask_prob = num(c, "wsd.mask_prob");
    config.optim = optim_config(c.at("wsd").at("optim"));
    config.seed = run.seed();

    run.note("training " + objective + " on " + std::to_string(instances.size()) + " instances");
    const auto records = train_wsd(model, instances, inventory, tok, config);
    std::string csv = "epoch,train_loss\n";
    for (const auto& r : records) {
        csv += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "\n";
        run.note("epoch " + std::to_string(r.epoch) + " loss " + fmt(r.train_loss));
    }
    write_text(run.dir / "epochs.csv", csv);
    save_checkpoint(run.dir / "model.tdlm", model, records.size());
    return 0;
}

int cmd_wsd_eval(Run& run)
{
    const json& c = run.config;
    const Tokenizer tok = load_tokenizer(c);
    const Model model = load_model(require_path(c, "checkpoint"), &tok);
    const SenseInventory inventory = load_sense_inventory(require_path(c, "inventory"));
    const auto instances = load_wsd_instances(require_path(c, "instances"));
    const WsdReport report = evaluate_wsd(model, instances, inventory, tok);
    write_wsd_report(run.dir / "report.csv", report);
    for (const auto& s : report.datasets)
        run.note(s.dataset + " " + std::to_string(s.correct) + "/" + std::to_string(s.instances) + " F1 " + fmt(s.f1));
    run.note("ALL F1 " + fmt(report.pooled.f1));
    return 0;
}

FeatureMatrix features_of(const std::string& paragraphs, const WordVectorTable& vectors, Run& run)
{
    const FeatureMatrix f = build_features(load_labeled_paragraphs(paragraphs), vectors);
    if (f.all_oov_rows > 0) run.note("warning: " + std::to_string(f.all_oov_rows) + " paragraphs had no known words");
    return f;
}

WordVectorTable vectors_of(const json& c, Run& run)
{
    std::vector<std::string> warnings;
    WordVectorTable table = load_word_vectors(require_path(c, "vectors"), &warnings);
    for (const auto& w : warnings) run.note("warning: " + w);
    return table;
}

int cmd_mpp_features(Run& run)
{
    const auto vectors = vectors_of(run.config, run);
    const FeatureMatrix f = features_of(require_path(run.config, "paragraphs"), vectors, run);
    write_features_csv(run.dir / "features.csv", f);
    run.note("features: " + std::to_string(f.x.rows()) + " x " + std::to_string(f.x.cols()));
    return 0;
}

int cmd_mpp_train(Run& run)
{
    const json& c = run.config;
    const auto vectors = vectors_of(c, run);
    const FeatureMatrix train = features_of(require_path(c, "train"), vectors, run);
    const FeatureMatrix test = features_of(require_path(c, "test"), vectors, run);
    const std::string kind = str(c, "classifier");
    Classifier model;
    if (kind == "lr") {
        LogRegConfig lr;
        lr.learning_rate = num(c, "logreg.lr");
        lr.tolerance = num(c, "logreg.tolerance");
        lr.max_iter = count(c, "logreg.max_iter");
        lr.l2 = num(c, "logreg.l2");
        lr.solver = solver_from_name(str(c, "logreg.solver"));
        lr.multi_class = multi_class_from_name(str(c, "logreg.multi_class"));
        model = train_logreg(train.x, train.y, lr).classifier;
    } else if (kind == "nb") {
        model = train_nb(train.x, train.y, num(c, "nb.variance_floor"));
    } else if (kind == "svm") {
        SvmConfig svm;
        svm.c = num(c, "svm.c");
        svm.tolerance = num(c, "svm.tolerance");
        svm.max_iter = count(c, "svm.max_iter");
        svm.learning_rate = num(c, "svm.lr");
        model = train_linear_svm(train.x, train.y, svm);
    } else {
        throw ConfigError("unknown classifier '" + kind + "' (lr, nb, svm)");
    }
    const auto predicted = model.predict(test.x);
    const double f1 = f1_micro(predicted, test.y);
    std::string csv = "index,label,predicted\n";
    for (std::size_t i = 0; i < predicted.size(); ++i)
        csv += std::to_string(i) + "," + std::to_string(test.y[i]) + "," + std::to_string(predicted[i]) + "\n";
    write_text(run.dir / "predictions.csv", csv);
    write_text(run.dir / "metrics.csv", "classifier,f1_micro\n" + kind + "," + fmt(f1) + "\n");
    run.note(kind + " F1-micro " + fmt(f1));
    return 0;
}

int cmd_mpp_gridsearch(Run& run)
{
    const json& c = run.config;
    const auto vectors = vectors_of(c, run);
    const FeatureMatrix train = features_of(require_path(c, "train"), vectors, run);
    const FeatureMatrix validation = features_of(require_path(c, "validation"), vectors, run);
    const GridSpec spec = logreg_grid();
    const GridResult result = grid_search(logreg_grid_trainer(num(c, "l2")), spec, train, validation);
    write_grid_csv(run.dir / "grid.csv", spec, result);
    std::string best;
    for (std::size_t a = 0; a < spec.axes.size(); ++a)
        best += spec.axes[a].first + "=" + result.cells[result.best][a] + " ";
    run.note(std::to_string(spec.cells()) + " cells; best " + best + "F1 " + fmt(result.metric[result.best]));
    return 0;
}

int cmd_mpp_finetune(Run& run)
{
    const json& c = run.config;
    const Tokenizer tok = load_tokenizer(c);
    Model model = load_model(require_path(c, "checkpoint"), &tok);
    FinetuneConfig config;
    config.epochs = count(c, "finetune.epochs");
    config.batch_size = count(c, "finetune.batch_size");
    config.optim = optim_config(c.at("finetune").at("optim"));
    config.freeze_encoder = flag(c, "finetune.freeze_encoder");
    config.seed = run.seed();
    const auto train = load_labeled_paragraphs(require_path(c, "train"));
    const auto test = load_labeled_paragraphs(require_path(c, "test"));
    const FinetuneResult result = finetune_classifier(model, tok, train, test, config);
    std::string csv = "epoch,train_loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        csv += std::to_string(e + 1) + "," + fmt(result.epoch_loss[e]) + "\n";
    write_text(run.dir / "epochs.csv", csv);
    write_text(run.dir / "metrics.csv", "f1_micro\n" + fmt(result.f1) + "\n");
    save_checkpoint(run.dir / "model.tdlm", model, result.epoch_loss.size());
    run.note("fine-tuned F1-micro " + fmt(result.f1));
    return 0;
}

std::vector<std::string> read_lines(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

MppWorldSpec mpp_world_spec(const json& j)
{
    MppWorldSpec s;
    s.base_words = j.at("base_words").get<std::size_t>();
    s.replaceable = j.at("replaceable").get<std::size_t>();
    s.synonyms_per_word = j.at("synonyms_per_word").get<std::size_t>();
    s.dim = j.at("dim").get<std::size_t>();
    s.paragraphs = j.at("paragraphs").get<std::size_t>();
    s.words_per_paragraph = j.at("words_per_paragraph").get<std::size_t>();
    s.offset = j.at("offset").get<double>();
    s.noise = j.at("noise").get<double>();
    return s;
}

int cmd_mpp_synth(Run& run)
{
    const json& c = run.config;
    std::vector<std::string> paragraphs;
    SynonymTable synonyms;
    if (str(c, "paragraphs").empty() != str(c, "synonyms").empty()) {
        throw ConfigError("--paragraphs and --synonyms go together; omit both to generate a world");
    }
    if (str(c, "paragraphs").empty()) {
        MppWorld world = synth_mpp_world(mpp_world_spec(c.at("world")), run.seed());
        save_word_vectors(run.dir / "vectors.txt", world.vectors);
        save_synonyms(run.dir / "synonyms.json", world.synonyms);
        paragraphs = std::move(world.paragraphs);
        synonyms = std::move(world.synonyms);
    } else {
        paragraphs = read_lines(str(c, "paragraphs"));
        synonyms = load_synonyms(str(c, "synonyms"));
    }
    const SynthResult result = synth_paraphrase(paragraphs, synonyms, num(c, "ratio"), run.seed());
    save_labeled_paragraphs(run.dir / "pairs.jsonl", result.pairs);
    write_text(run.dir / "summary.csv", "replaceable,replaced,realized_ratio\n" + std::to_string(result.replaceable) +
                                            "," + std::to_string(result.replaced) + "," +
                                            fmt(result.realized_ratio()) + "\n");
    run.note(std::to_string(result.pairs.size()) + " paragraphs, realized ratio " + fmt(result.realized_ratio()));
    return 0;
}

int cmd_gradcheck(Run& run)
{
    const double threshold = num(run.config, "threshold");
    const auto cases = run_gradcheck_suite(num(run.config, "step_size"));
    std::string csv = "op,max_rel_error,pass\n";
    bool ok = true;
    for (const auto& k : cases) {
        const bool pass = k.error < threshold;
        ok = ok && pass;
        csv += k.name + "," + fmt(k.error) + "," + (pass ? "1" : "0") + "\n";
        std::ostringstream line;
        line << std::left << std::setw(24) << k.name << std::scientific << std::setprecision(3) << k.error
             << (pass ? "  ok" : "  FAIL");
        run.note(line.str());
    }
    write_text(run.dir / "gradcheck.csv", csv);
    run.note(ok ? "all ops below threshold" : "gradient check FAILED");
    return ok ? 0 : 1;
}

int cmd_synth_corpus(Run& run)
{
    const json& j = run.config.at("corpus");
    CorpusSpec s;
    s.documents = j.at("documents").get<std::size_t>();
    s.sentences_per_document = j.at("sentences_per_document").get<std::size_t>();
    s.topics = j.at("topics").get<std::size_t>();
    s.nouns_per_topic = j.at("nouns_per_topic").get<std::size_t>();
    s.verbs_per_topic = j.at("verbs_per_topic").get<std::size_t>();
    s.adjectives_per_topic = j.at("adjectives_per_topic").get<std::size_t>();
    s.topic_purity = j.at("topic_purity").get<double>();
    const auto docs = synth_corpus(s, run.seed());
    write_corpus(run.dir / "corpus.txt", docs);
    run.note(std::to_string(docs.size()) + " documents written");
    return 0;
}

int cmd_wsd_synth(Run& run)
{
    const json& j = run.config.at("world");
    WsdWorldSpec s;
    s.lemmas = j.at("lemmas").get<std::size_t>();
    s.min_senses = j.at("min_senses").get<std::size_t>();
    s.max_senses = j.at("max_senses").get<std::size_t>();
    s.domains = j.at("domains").get<std::size_t>();
    s.cues_per_domain = j.at("cues_per_domain").get<std::size_t>();
    s.gloss_cues = j.at("gloss_cues").get<std::size_t>();
    s.fillers = j.at("fillers").get<std::size_t>();
    s.train_per_lemma = j.at("train_per_lemma").get<std::size_t>();
    s.test_per_lemma = j.at("test_per_lemma").get<std::size_t>();
    s.context_fillers = j.at("context_fillers").get<std::size_t>();
    s.context_cues = j.at("context_cues").get<std::size_t>();
    const WsdWorld world = synth_wsd_world(s, run.seed());
    write_jsonl(run.dir / "inventory.jsonl", sense_inventory_rows(world.inventory));
    const auto rows = [](const std::vector<WsdInstance>& v) {
        std::vector<json> out;
        for (const auto& i : v) out.push_back(to_json(i));
        return out;
    };
    write_jsonl(run.dir / "train.jsonl", rows(world.train));
    write_jsonl(run.dir / "test.jsonl", rows(world.test));
    std::string text;
    for (const auto& line : world.text) text += line + "\n";
    write_text(run.dir / "text.txt", text);
    run.note(std::to_string(world.inventory.sense_count()) + " senses, " + std::to_string(world.train.size()) +
             " training and " + std::to_string(world.test.size()) + " test instances");
    return 0;
}

struct Command {
    std::string name;
    std::string help;
    std::function<json()> defaults;
    std::function<int(Run&)> run;
};

const std::vector<Command>& commands()
{
    static const std::vector<Command> list = {
        {"tokenizer-train", "learn a BPE vocabulary from a corpus",
         [] { return json{{"corpus", ""}, {"vocab_size", 512}}; }, cmd_tokenizer_train},
        {"pretrain-mlm", "train a masked language model (teacher pre-training)",
         [] {
             json j = corpus_defaults();
             j["init"] = "";
             j["model"] = model_defaults(4);
             j["train"] = train_defaults();
             return j;
         },
         cmd_pretrain_mlm},
        {"distill", "multi-teacher distillation into a student",
         [] {
             json j = corpus_defaults();
             j["teachers"] = json::array();
             j["student"] = {{"init", "teacher"}, {"model", model_defaults(2)}};
             j["distill"] = {{"temperature", 2.5}, {"ground_truth_step", 100}, {"feature_weight", 1.0},
                             {"weighting", "confidence"}};
             j["train"] = train_defaults();
             return j;
         },
         cmd_distill},
        {"eval-ppl", "masked-token cross-entropy and perplexity of a checkpoint",
         [] {
             return json{{"checkpoint", ""}, {"corpus", ""},       {"tokenizer", ""}, {"seq_len", 32},
                         {"batch_size", 32}, {"mask_prob", 0.15}, {"mask_seed", 1234}};
         },
         cmd_eval_ppl},
        {"wsd-train", "gloss-classification training (lmgc or lmgc-m)",
         [] {
             json model = model_defaults(2);
             model["ff"] = 128;
             model["max_seq"] = 64;
             return json{{"inventory", ""},
                         {"instances", ""},
                         {"tokenizer", ""},
                         {"init", ""},
                         {"model", model},
                         {"wsd",
                          {{"objective", "lmgc"},
                           {"epochs", 3},
                           {"candidates", kDefaultCandidates},
                           {"instances_per_step", 4},
                           {"gamma", 2.0},
                           {"alpha", 0.25},
                           {"paper_literal_focal", false},
                           {"mlm_reduction", "sum"},
                           {"mask_prob", 0.15},
                           {"optim", optim_defaults(2e-3)}}}};
         },
         cmd_wsd_train},
        {"wsd-eval", "sense prediction F1 per dataset",
         [] { return json{{"checkpoint", ""}, {"inventory", ""}, {"instances", ""}, {"tokenizer", ""}}; },
         cmd_wsd_eval},
        {"mpp-features", "averaged word-vector features of labeled paragraphs",
         [] { return json{{"paragraphs", ""}, {"vectors", ""}}; }, cmd_mpp_features},
        {"mpp-train", "train and score lr, nb or svm on averaged embeddings",
         [] {
             return json{{"classifier", "lr"},
                         {"train", ""},
                         {"test", ""},
                         {"vectors", ""},
                         {"logreg",
                          {{"lr", 0.5}, {"tolerance", 1e-4}, {"max_iter", 1000}, {"l2", 0.0},
                           {"solver", "lbfgs"}, {"multi_class", "ovr"}}},
                         {"svm", {{"c", 1.0}, {"tolerance", 1e-4}, {"max_iter", 1000}, {"lr", 0.5}}},
                         {"nb", {{"variance_floor", 1e-9}}}};
         },
         cmd_mpp_train},
        {"mpp-gridsearch", "96-cell logistic-regression grid",
         [] { return json{{"train", ""}, {"validation", ""}, {"vectors", ""}, {"l2", 0.0}}; }, cmd_mpp_gridsearch},
        {"mpp-finetune", "fine-tune a checkpoint as a paraphrase classifier",
         [] {
             return json{{"checkpoint", ""},
                         {"tokenizer", ""},
                         {"train", ""},
                         {"test", ""},
                         {"finetune",
                          {{"epochs", 1}, {"batch_size", 8}, {"freeze_encoder", false}, {"optim", optim_defaults(2e-5)}}}};
         },
         cmd_mpp_finetune},
        {"mpp-synth", "synonym-replacement paraphrase pairs",
         [] {
             const MppWorldSpec w;
             return json{{"paragraphs", ""},
                         {"synonyms", ""},
                         {"ratio", kRatioIntermediateFrequency},
                         {"world",
                          {{"base_words", w.base_words},
                           {"replaceable", w.replaceable},
                           {"synonyms_per_word", w.synonyms_per_word},
                           {"dim", w.dim},
                           {"paragraphs", w.paragraphs},
                           {"words_per_paragraph", w.words_per_paragraph},
                           {"offset", w.offset},
                           {"noise", w.noise}}}};
         },
         cmd_mpp_synth},
        {"gradcheck", "finite-difference check of every differentiable op",
         [] { return json{{"step_size", 1e-6}, {"threshold", 1e-5}}; }, cmd_gradcheck},
        {"synth-corpus", "write the synthetic pre-training corpus",
         [] {
             const CorpusSpec s;
             return json{{"corpus",
                          {{"documents", s.documents},
                           {"sentences_per_document", s.sentences_per_document},
                           {"topics", s.topics},
                           {"nouns_per_topic", s.nouns_per_topic},
                           {"verbs_per_topic", s.verbs_per_topic},
                           {"adjectives_per_topic", s.adjectives_per_topic},
                           {"topic_purity", s.topic_purity}}}};
         },
         cmd_synth_corpus},
        {"wsd-synth", "write the synthetic sense inventory and instances",
         [] {
             const WsdWorldSpec s;
             return json{{"world",
                          {{"lemmas", s.lemmas},
                           {"min_senses", s.min_senses},
                           {"max_senses", s.max_senses},
                           {"domains", s.domains},
                           {"cues_per_domain", s.cues_per_domain},
                           {"gloss_cues", s.gloss_cues},
                           {"fillers", s.fillers},
                           {"train_per_lemma", s.train_per_lemma},
                           {"test_per_lemma", s.test_per_lemma},
                           {"context_fillers", s.context_fillers},
                           {"context_cues", s.context_cues}}}};
         },
         cmd_wsd_synth},
    };
    return list;
}

const Command& find_command(const std::string& name)
{
    for (const auto& c : commands())
        if (c.name == name) return c;
    throw ConfigError("unknown command '" + name + "'");
}

struct FlagBinding {
    std::string path;
    std::string value;
    CLI::Option* option = nullptr;
};

} // namespace

std::vector<std::string> command_names()
{
    std::vector<std::string> names;
    for (const auto& c : commands()) names.push_back(c.name);
    return names;
}

json default_config(const std::string& command)
{
    return with_common(find_command(command).defaults());
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"tdlm: distillation, gloss classification and paraphrase experiments"};
    app.require_subcommand(1);
    std::map<std::string, std::vector<FlagBinding>> bindings;
    std::map<std::string, std::string> config_files;
    std::map<std::string, CLI::App*> subs;

    for (const auto& cmd : commands()) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        subs[cmd.name] = sub;
        sub->add_option("--config", config_files[cmd.name], "JSON file merged over the defaults");
        const json defaults = with_common(cmd.defaults());
        const auto paths = leaf_paths(defaults);
        std::map<std::string, int> leaf_counts;
        for (const auto& p : paths) ++leaf_counts[p.substr(p.rfind('.') + 1)];
        auto& list = bindings[cmd.name];
        list.reserve(paths.size());
        for (const auto& p : paths) {
            list.push_back({p, "", nullptr});
            const std::string leaf = p.substr(p.rfind('.') + 1);
            std::string names = "--" + flag_name(p);
            // Unambiguous leaves also get a short spelling, e.g. --max-steps for train.max_steps.
            if (leaf != p && leaf_counts[leaf] == 1 && leaf != "config") names += ",--" + flag_name(leaf);
            std::string help = "default " + at_path(defaults, p).dump();
            list.back().option = sub->add_option(names, list.back().value, help);
        }
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    std::string name;
    for (const auto& [n, sub] : subs)
        if (sub->parsed()) name = n;
    const Command& cmd = find_command(name);

    json config = with_common(cmd.defaults());
    try {
        if (!config_files[name].empty()) {
            std::ifstream f(config_files[name], std::ios::binary);
            if (!f) throw IoError("cannot read config " + config_files[name]);
            json patch;
            try {
                patch = json::parse(f);
            } catch (const json::exception& e) {
                throw ConfigError(config_files[name] + ": " + e.what());
            }
            merge_config(config, patch);
        }
        for (const auto& b : bindings[name]) {
            if (b.option->count() == 0) continue;
            at_path(config, b.path) = parse_flag_value(at_path(config, b.path), b.value, b.path);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        const fs::path dir = config.at("out_dir").get<std::string>();
        fs::create_directories(dir);
        DirLock lock(dir / ".lock");
        Run run{config, dir, out, std::ofstream(dir / "run.log", std::ios::app)};
        set_num_threads(std::max<std::size_t>(1, count(config, "threads")));
        write_text(dir / "config.json", config.dump(2) + "\n");
        run.note("start " + name);
        const int status = cmd.run(run);
        run.note("done " + name + " status " + std::to_string(status));
        return status;
    } catch (const LockError& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace tdlm::cli
