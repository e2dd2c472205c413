// Command-line pipeline driver: raw logs -> histories -> essences -> knowledge
// base -> contexts/predictions/triplets/evaluation. Stages talk through files
// so any step can be rerun or inspected on its own.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <txnkb/txnkb.hpp>

namespace {

// Exit codes, one per failure category, so scripts can branch on them.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitMissingInput = 66;
constexpr int kExitTransport = 69;
constexpr int kExitInternal = 70;
constexpr int kExitConfig = 78;

struct MissingInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
    if (!std::filesystem::exists(path)) throw MissingInputError(path + " does not exist");
}

struct GatewayOptions {
    std::string spec = "mock:policy";
    txnkb::GatewayConfig http;
};

std::unique_ptr<txnkb::Gateway> make_gateway(const GatewayOptions& opt) {
    if (opt.spec == "mock:policy") return std::make_unique<txnkb::PolicyGateway>();
    if (opt.spec.rfind("mock:script=", 0) == 0) {
        const std::string path = opt.spec.substr(std::string("mock:script=").size());
        require_file(path);
        std::ifstream in(path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw txnkb::ConfigError("script file " + path + ": " + e.what());
        }
        if (!j.is_array()) throw txnkb::ConfigError("script file must hold a JSON array of replies");
        std::vector<std::string> replies;
        for (const auto& r : j) replies.push_back(r.get<std::string>());
        return std::make_unique<txnkb::ScriptedGateway>(std::move(replies));
    }
    if (opt.spec == "http") return std::make_unique<txnkb::HttpGateway>(opt.http);
    throw txnkb::ConfigError("unknown gateway '" + opt.spec +
                             "' (use mock:policy, mock:script=<file>, or http)");
}

void add_gateway_flags(CLI::App* cmd, GatewayOptions& opt) {
    cmd->add_option("--gateway", opt.spec,
                    "mock:policy | mock:script=<file> | http (default mock:policy)");
    cmd->add_option("--base-url", opt.http.base_url, "HTTP gateway base URL");
    cmd->add_option("--model", opt.http.model, "model name sent to the HTTP gateway");
    cmd->add_option("--api-key-env", opt.http.api_key_env,
                    "environment variable holding the API key");
    cmd->add_option("--timeout", opt.http.timeout_s, "HTTP timeout in seconds");
    cmd->add_option("--retries", opt.http.max_retries, "HTTP retry budget");
}

struct CatalogOption {
    std::string path;

    std::vector<txnkb::EssenceSpec> load() const {
        if (path.empty()) return txnkb::default_essence_specs();
        require_file(path);
        return txnkb::load_essence_specs(path);
    }
};

nlohmann::json resolved_config(const CLI::App& cmd) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto* opt : cmd.get_options()) {
        if (opt->get_name().empty() || opt->get_name() == "--help") continue;
        if (!opt->results().empty())
            j[opt->get_name()] = opt->results().size() == 1 ? nlohmann::json(opt->results()[0])
                                                            : nlohmann::json(opt->results());
    }
    return j;
}

void write_sidecar_meta(const std::string& out_path, const CLI::App& cmd) {
    nlohmann::json meta{{"command", cmd.get_name()}, {"config", resolved_config(cmd)}};
    std::ofstream out(out_path + ".meta.json", std::ios::binary);
    out << meta.dump(2) << '\n';
}

const txnkb::TargetSpec& resolve_target(const txnkb::KnowledgeBase& kb, const std::string& name) {
    if (kb.target_layer.empty()) throw txnkb::DataError("knowledge base has no targets");
    if (name.empty()) {
        if (kb.target_layer.size() == 1) return kb.target_layer.front();
        throw txnkb::ConfigError("knowledge base has several targets; pass --target");
    }
    const auto* t = kb.find_target(name);
    if (!t) throw txnkb::DataError("no such target in the knowledge base: " + name);
    return *t;
}

const txnkb::UserHistory& resolve_user(const std::vector<txnkb::UserHistory>& hs,
                                       const std::string& user_id) {
    for (const auto& h : hs)
        if (h.user_id == user_id) return h;
    throw txnkb::DataError("no such user in the histories file: " + user_id);
}

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

// --- subcommand bodies ---

int cmd_synth(const CLI::App& cmd, int users, std::uint64_t seed, const std::string& plant,
              double test_fraction, const std::string& out_path) {
    auto plan = txnkb::parse_plant_spec(plant);
    plan.test_fraction = test_fraction;
    const auto histories = txnkb::generate_synthetic(users, seed, plan);
    txnkb::save_histories_file(out_path, histories);
    write_sidecar_meta(out_path, cmd);
    std::size_t pos = 0, train = 0, test = 0;
    for (const auto& h : histories) {
        if (h.label && *h.label == plan.positive_label) ++pos;
        (h.split == txnkb::Split::Train ? train : test) += 1;
    }
    std::cout << "wrote " << histories.size() << " users to " << out_path << " (positives " << pos
              << ", train " << train << ", test " << test << ")\n";
    return kExitOk;
}

int cmd_ingest(const CLI::App& cmd, const std::string& data, const std::string& adapter_name,
               const std::string& out_path, long subsample, std::uint64_t seed) {
    require_file(data);
    txnkb::DatasetAdapter adapter;
    if (std::filesystem::exists(adapter_name)) {
        adapter = txnkb::load_adapter(adapter_name);
    } else {
        adapter = txnkb::builtin_adapter(adapter_name);
    }
    auto result = txnkb::parse_transactions_file(data, adapter);
    auto histories = std::move(result.histories);
    if (subsample > 0)
        histories = txnkb::subsample_stratified(histories, static_cast<std::size_t>(subsample), seed);
    txnkb::save_histories_file(out_path, histories);
    write_sidecar_meta(out_path, cmd);
    std::cout << "parsed " << result.rows_total << " rows into " << histories.size() << " users ("
              << result.row_errors.size() << " malformed rows skipped)\n";
    for (std::size_t i = 0; i < result.row_errors.size() && i < 5; ++i)
        std::cerr << "note: row " << result.row_errors[i].row << ": "
                  << result.row_errors[i].message << "\n";
    return kExitOk;
}

int cmd_essences(const CLI::App& cmd, const std::string& histories_path,
                 const CatalogOption& catalog, const std::string& out_path) {
    require_file(histories_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);
    const auto matrix = txnkb::compute_essence_matrix(histories, specs);
    {
        std::ofstream out(out_path + ".tmp", std::ios::binary);
        if (!out) throw txnkb::DataError("cannot open output file: " + out_path);
        txnkb::write_essence_matrix(out, matrix);
    }
    if (std::rename((out_path + ".tmp").c_str(), out_path.c_str()) != 0)
        throw txnkb::DataError("cannot move output into place: " + out_path);
    write_sidecar_meta(out_path, cmd);
    std::cout << "wrote " << matrix.rows.size() << " x " << matrix.names.size()
              << " essence matrix to " << out_path << "\n";
    return kExitOk;
}

int cmd_build_kb(const CLI::App& cmd, const std::string& histories_path,
                 const CatalogOption& catalog, const std::string& out_path,
                 const std::string& target_name, const std::string& target_desc,
                 const std::string& labels_csv, const std::string& positive,
                 const std::string& strategy_name, std::uint64_t seed,
                 const GatewayOptions& gw_opt, int max_bins, bool monotonic) {
    require_file(histories_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);

    txnkb::TargetSpec target;
    target.id = "tgt_" + target_name;
    target.name = target_name;
    target.description = target_desc.empty()
                             ? "Will the user show " + target_name +
                                   " behavior, judged from their transaction history?"
                             : target_desc;
    target.class_labels = split_csv_list(labels_csv);
    target.positive_class = positive;

    txnkb::SelectionStrategy strategy;
    strategy.kind = txnkb::strategy_kind_from_string(strategy_name);
    strategy.seed = seed;
    std::unique_ptr<txnkb::Gateway> gateway;
    if (strategy.kind == txnkb::StrategyKind::LLMGuided) {
        gateway = make_gateway(gw_opt);
        strategy.gateway = gateway.get();
    }

    txnkb::KbConfig kb_cfg;
    kb_cfg.binning.max_bins = max_bins;
    kb_cfg.binning.monotonic = monotonic;

    auto kb = txnkb::build_kb(histories, specs, strategy, {target}, kb_cfg);
    kb.extra["cli_config"] = resolved_config(cmd);
    txnkb::save_kb_file(out_path, kb);
    std::size_t pattern_rules = 0;
    for (const auto& p : kb.pattern_layer) pattern_rules += p.rules.size();
    std::cout << "built knowledge base: " << kb.essence_layer.size() << " essences, "
              << kb.pattern_layer.size() << " patterns (" << pattern_rules << " rules), "
              << kb.target_rules.size() << " target rules -> " << out_path << "\n";
    for (const auto& w : kb.meta.warnings) std::cerr << "warning: " << w << "\n";
    return kExitOk;
}

int cmd_rules(const std::string& kb_path, const std::string& target_name,
              const std::string& grade_filter) {
    require_file(kb_path);
    const auto kb = txnkb::load_kb_file(kb_path);
    std::optional<txnkb::Grade> min_grade;
    if (!grade_filter.empty()) min_grade = txnkb::grade_from_string(grade_filter);
    std::string scope_id;
    if (!target_name.empty()) scope_id = resolve_target(kb, target_name).id;

    std::size_t shown = 0;
    for (const auto* r : kb.all_rules()) {
        if (!scope_id.empty() &&
            !(r->scope == txnkb::RuleScope::Target && r->scope_id == scope_id))
            continue;
        if (min_grade && r->grade < *min_grade) continue;
        std::cout << r->rendered_text << "  [" << r->id << " woe=" << txnkb::format_double(r->woe_value)
                  << "]\n";
        ++shown;
    }
    if (shown == 0) std::cerr << "note: no rules matched the filters\n";
    return kExitOk;
}

int cmd_facts(const std::string& kb_path, const std::string& histories_path,
              const CatalogOption& catalog, const std::string& user_id) {
    require_file(kb_path);
    require_file(histories_path);
    const auto kb = txnkb::load_kb_file(kb_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);
    const auto& h = resolve_user(histories, user_id);
    const auto row = txnkb::compute_essences(h, specs);
    for (const auto& f : txnkb::instantiate_facts(kb, row))
        std::cout << "(" << f.subject_id << ") " << f.rendered_text << "\n";
    return kExitOk;
}

struct ContextFlags {
    std::string strategy = "kb";
    std::string shots = "0";
    std::uint64_t seed = 0;
    int top_k = 3;
    std::string min_grade = "moderate";
    std::string dataset_id = "dataset";
};

void add_context_flags(CLI::App* cmd, ContextFlags& f) {
    cmd->add_option("--strategy", f.strategy, "ZS | Q | FI | QFI | KBviaWB (alias kb)");
    cmd->add_option("--shots", f.shots, "shot budget: 0, 4, 16, or full");
    cmd->add_option("--seed", f.seed, "seed for shot sampling");
    cmd->add_option("--top-k", f.top_k, "patterns retrieved per context");
    cmd->add_option("--min-fact-grade", f.min_grade, "weakest fact grade admitted to a context");
    cmd->add_option("--dataset-id", f.dataset_id, "dataset id stamped into reports");
}

txnkb::ContextConfig context_config(const ContextFlags& f) {
    txnkb::ContextConfig cfg;
    cfg.top_k_patterns = f.top_k;
    cfg.min_fact_grade = txnkb::grade_from_string(f.min_grade);
    return cfg;
}

// Shared assembly for retrieve/predict: context for one user plus the shots
// the run would use.
txnkb::PromptContext build_user_context(const txnkb::KnowledgeBase& kb,
                                        const std::vector<txnkb::UserHistory>& histories,
                                        const std::vector<txnkb::EssenceSpec>& specs,
                                        const txnkb::TargetSpec& target,
                                        const txnkb::UserHistory& user, const ContextFlags& flags) {
    const auto strategy = txnkb::context_strategy_from_string(flags.strategy);
    const auto budget = txnkb::parse_shot_budget(flags.shots);
    const auto cfg = context_config(flags);

    std::vector<const txnkb::UserHistory*> pool;
    for (const auto& h : histories)
        if (h.split == txnkb::Split::Train && h.label && h.user_id != user.user_id)
            pool.push_back(&h);
    const auto shot_users = txnkb::sample_shot_users(
        pool, budget.count, txnkb::fnv1a(flags.dataset_id + "|" + budget.label) ^ flags.seed);
    std::vector<txnkb::ShotExemplar> shots;
    for (const auto* h : shot_users)
        shots.push_back(txnkb::render_shot(kb, target, *h, specs, strategy, cfg));

    const auto row = txnkb::compute_essences(user, specs);
    txnkb::ContextInputs in;
    in.history = &user;
    in.essences = &row;
    if (strategy == txnkb::ContextStrategy::KBviaWB) in.facts = txnkb::instantiate_facts(kb, row);
    return txnkb::assemble_context(kb, target, in, strategy, shots, {}, cfg);
}

int cmd_retrieve(const std::string& kb_path, const std::string& histories_path,
                 const CatalogOption& catalog, const std::string& user_id,
                 const std::string& target_name, const ContextFlags& flags) {
    require_file(kb_path);
    require_file(histories_path);
    const auto kb = txnkb::load_kb_file(kb_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);
    const auto& target = resolve_target(kb, target_name);
    const auto& user = resolve_user(histories, user_id);
    const auto ctx = build_user_context(kb, histories, specs, target, user, flags);
    std::cout << ctx.rendered;
    std::cerr << "note: " << ctx.facts.size() << " facts, " << ctx.shots.size()
              << " shots, strategy " << txnkb::to_string(ctx.strategy) << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& kb_path, const std::string& histories_path,
                const CatalogOption& catalog, const std::string& user_id,
                const std::string& target_name, const ContextFlags& flags,
                const GatewayOptions& gw_opt) {
    require_file(kb_path);
    require_file(histories_path);
    const auto kb = txnkb::load_kb_file(kb_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);
    const auto& target = resolve_target(kb, target_name);
    const auto& user = resolve_user(histories, user_id);
    const auto ctx = build_user_context(kb, histories, specs, target, user, flags);
    const auto gateway = make_gateway(gw_opt);
    const auto budget = txnkb::parse_shot_budget(flags.shots);
    // Single-user prediction carries no reflection memory; the eval command
    // owns the full shot-pool protocol.
    const auto result = budget.count > 0 ? txnkb::reflect_revise(*gateway, ctx, {})
                                         : txnkb::predict_once(*gateway, ctx);
    nlohmann::json j{{"user_id", user.user_id},
                     {"prediction", result.label},
                     {"rationale", result.rationale},
                     {"evidence_chain", result.evidence_chain},
                     {"flags", result.flags}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_gen_instruct(const CLI::App& cmd, const std::string& kb_path,
                     const std::string& histories_path, const CatalogOption& catalog,
                     const std::string& target_name, const std::string& mode_name,
                     const std::string& out_path, const std::string& split_name,
                     const GatewayOptions& gw_opt) {
    require_file(kb_path);
    require_file(histories_path);
    const auto kb = txnkb::load_kb_file(kb_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);
    const auto& target = resolve_target(kb, target_name);

    txnkb::TripletMode mode;
    if (mode_name == "template") mode = txnkb::TripletMode::Template;
    else if (mode_name == "llm") mode = txnkb::TripletMode::Llm;
    else throw txnkb::ConfigError("unknown mode '" + mode_name + "' (template or llm)");

    std::vector<txnkb::UserHistory> pool;
    for (const auto& h : histories) {
        if (!h.label) continue;
        if (split_name == "train" && h.split != txnkb::Split::Train) continue;
        pool.push_back(h);
    }

    std::unique_ptr<txnkb::Gateway> gateway;
    if (mode == txnkb::TripletMode::Llm) gateway = make_gateway(gw_opt);
    txnkb::GenerationReport report;
    const auto triplets =
        txnkb::generate_triplets(kb, pool, specs, target, mode, gateway.get(), report);
    txnkb::export_dataset(triplets, out_path);
    write_sidecar_meta(out_path, cmd);
    std::cout << "wrote " << triplets.size() << " triplets to " << out_path << " (generated "
              << report.generated << ", regenerated " << report.regenerated << ", dropped "
              << report.dropped << ", unlabeled skipped " << report.skipped_unlabeled << ")\n";
    return kExitOk;
}

int cmd_eval(const CLI::App& cmd, const std::string& kb_path, const std::string& histories_path,
             const CatalogOption& catalog, const std::string& target_name,
             const ContextFlags& flags, const GatewayOptions& gw_opt,
             const std::string& report_path) {
    require_file(kb_path);
    require_file(histories_path);
    const auto kb = txnkb::load_kb_file(kb_path);
    const auto specs = catalog.load();
    const auto histories = txnkb::load_histories_file(histories_path);
    const auto& target = resolve_target(kb, target_name);
    const auto gateway = make_gateway(gw_opt);
    const auto budget = txnkb::parse_shot_budget(flags.shots);
    const auto cfg = context_config(flags);

    std::vector<txnkb::RunReport> reports;
    for (const auto& strategy_token : split_csv_list(flags.strategy)) {
        const auto strategy = txnkb::context_strategy_from_string(strategy_token);
        reports.push_back(txnkb::run_eval(kb, histories, specs, target, strategy, budget, *gateway,
                                          flags.seed, flags.dataset_id, cfg));
    }
    std::cout << txnkb::summary_table(reports);

    if (!report_path.empty()) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : reports) {
            auto j = txnkb::to_json(r);
            j["cli_config"] = resolved_config(cmd);
            out.push_back(std::move(j));
        }
        std::ofstream f(report_path + ".tmp", std::ios::binary);
        if (!f) throw txnkb::DataError("cannot open output file: " + report_path);
        f << out.dump(2) << '\n';
        f.close();
        if (std::rename((report_path + ".tmp").c_str(), report_path.c_str()) != 0)
            throw txnkb::DataError("cannot move output into place: " + report_path);
        std::cerr << "note: wrote report to " << report_path << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"behavioral knowledge base pipeline over transaction logs"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read defaults from an INI/TOML file (flags win)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    int synth_users = 2000;
    std::uint64_t synth_seed = 7;
    std::string synth_plant = "churn:activity<=70:noise0.1";
    double synth_test_fraction = 0.3;
    std::string synth_out = "histories.jsonl";
    synth->add_option("--users", synth_users, "number of users")->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--plant", synth_plant, "planted rule, e.g. churn:activity<=70:noise0.1");
    synth->add_option("--test-fraction", synth_test_fraction, "held-out fraction");
    synth->add_option("--out", synth_out, "output histories JSONL");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse a raw transaction log into histories");
    std::string ingest_data, ingest_adapter = "rosbank", ingest_out = "histories.jsonl";
    long ingest_subsample = 0;
    std::uint64_t ingest_seed = 0;
    ingest->add_option("--data", ingest_data, "raw delimited/JSONL log")->required();
    ingest->add_option("--adapter", ingest_adapter,
                       "built-in adapter name (rosbank|gender|datafusion) or adapter JSON path");
    ingest->add_option("--out", ingest_out, "output histories JSONL");
    ingest->add_option("--subsample", ingest_subsample,
                       "keep at most N labeled users (stratified)");
    ingest->add_option("--seed", ingest_seed, "subsample seed");

    // essences
    auto* essences = app.add_subcommand("essences", "compute the essence matrix as CSV");
    std::string ess_histories, ess_out = "essences.csv";
    CatalogOption ess_catalog;
    essences->add_option("--histories", ess_histories, "histories JSONL")->required();
    essences->add_option("--catalog", ess_catalog.path, "essence catalog JSON (default built-in)");
    essences->add_option("--out", ess_out, "output CSV path");

    // build-kb
    auto* build = app.add_subcommand("build-kb", "fit the knowledge base from histories");
    std::string bk_histories, bk_out = "kb.json", bk_target = "churn", bk_desc, bk_labels = "1,0";
    std::string bk_positive = "1", bk_strategy = "random";
    std::uint64_t bk_seed = 0;
    int bk_max_bins = 10;
    bool bk_monotonic = false;
    CatalogOption bk_catalog;
    GatewayOptions bk_gateway;
    build->add_option("--histories", bk_histories, "histories JSONL")->required();
    build->add_option("--out", bk_out, "output knowledge base JSON");
    build->add_option("--catalog", bk_catalog.path, "essence catalog JSON");
    build->add_option("--target-name", bk_target, "target name, e.g. churn");
    build->add_option("--target-desc", bk_desc, "natural-language target description");
    build->add_option("--labels", bk_labels, "comma-separated class labels");
    build->add_option("--positive", bk_positive, "positive class label");
    build->add_option("--strategy", bk_strategy,
                      "pattern selection: random | llm_guided | without_whitebox");
    build->add_option("--seed", bk_seed, "selection seed");
    build->add_option("--max-bins", bk_max_bins, "quantile pre-bin count");
    build->add_flag("--monotonic", bk_monotonic, "force monotonic binning");
    add_gateway_flags(build, bk_gateway);

    // rules
    auto* rules = app.add_subcommand("rules", "print rendered rules from a knowledge base");
    std::string r_kb, r_target, r_grade;
    rules->add_option("--kb", r_kb, "knowledge base JSON")->required();
    rules->add_option("--target", r_target, "only rules of this target");
    rules->add_option("--grade", r_grade, "minimum grade (weak|moderate|strong)");

    // facts
    auto* facts = app.add_subcommand("facts", "print the facts firing for one user");
    std::string f_kb, f_histories, f_user;
    CatalogOption f_catalog;
    facts->add_option("--kb", f_kb, "knowledge base JSON")->required();
    facts->add_option("--histories", f_histories, "histories JSONL")->required();
    facts->add_option("--user", f_user, "user id")->required();
    facts->add_option("--catalog", f_catalog.path, "essence catalog JSON");

    // retrieve
    auto* retrieve = app.add_subcommand(
        "retrieve", "assemble and print a prompt context (dry run, no gateway)");
    std::string rt_kb, rt_histories, rt_user, rt_target;
    CatalogOption rt_catalog;
    ContextFlags rt_flags;
    retrieve->add_option("--kb", rt_kb, "knowledge base JSON")->required();
    retrieve->add_option("--histories", rt_histories, "histories JSONL")->required();
    retrieve->add_option("--user", rt_user, "user id")->required();
    retrieve->add_option("--target", rt_target, "target name");
    retrieve->add_option("--catalog", rt_catalog.path, "essence catalog JSON");
    add_context_flags(retrieve, rt_flags);

    // predict
    auto* predict = app.add_subcommand("predict", "predict one user through a gateway");
    std::string p_kb, p_histories, p_user, p_target;
    CatalogOption p_catalog;
    ContextFlags p_flags;
    GatewayOptions p_gateway;
    predict->add_option("--kb", p_kb, "knowledge base JSON")->required();
    predict->add_option("--histories", p_histories, "histories JSONL")->required();
    predict->add_option("--user", p_user, "user id")->required();
    predict->add_option("--target", p_target, "target name");
    predict->add_option("--catalog", p_catalog.path, "essence catalog JSON");
    add_context_flags(predict, p_flags);
    add_gateway_flags(predict, p_gateway);

    // gen-instruct
    auto* gen = app.add_subcommand("gen-instruct", "emit instruction-tuning triplets");
    std::string g_kb, g_histories, g_target, g_mode = "template", g_out = "triplets.jsonl";
    std::string g_split = "train";
    CatalogOption g_catalog;
    GatewayOptions g_gateway;
    gen->add_option("--kb", g_kb, "knowledge base JSON")->required();
    gen->add_option("--histories", g_histories, "histories JSONL")->required();
    gen->add_option("--target", g_target, "target name");
    gen->add_option("--mode", g_mode, "template | llm");
    gen->add_option("--out", g_out, "output triplets JSONL");
    gen->add_option("--split", g_split, "labeled pool: train | all");
    gen->add_option("--catalog", g_catalog.path, "essence catalog JSON");
    add_gateway_flags(gen, g_gateway);

    // eval
    auto* eval = app.add_subcommand("eval", "run a strategy/shot evaluation over the test split");
    std::string e_kb, e_histories, e_target, e_report;
    CatalogOption e_catalog;
    ContextFlags e_flags;
    GatewayOptions e_gateway;
    eval->add_option("--kb", e_kb, "knowledge base JSON")->required();
    eval->add_option("--histories", e_histories, "histories JSONL")->required();
    eval->add_option("--target", e_target, "target name");
    eval->add_option("--catalog", e_catalog.path, "essence catalog JSON");
    eval->add_option("--report", e_report, "write the full JSON report here");
    add_context_flags(eval, e_flags);
    add_gateway_flags(eval, e_gateway);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed())
            return cmd_synth(*synth, synth_users, synth_seed, synth_plant, synth_test_fraction,
                             synth_out);
        if (ingest->parsed())
            return cmd_ingest(*ingest, ingest_data, ingest_adapter, ingest_out, ingest_subsample,
                              ingest_seed);
        if (essences->parsed()) return cmd_essences(*essences, ess_histories, ess_catalog, ess_out);
        if (build->parsed())
            return cmd_build_kb(*build, bk_histories, bk_catalog, bk_out, bk_target, bk_desc,
                                bk_labels, bk_positive, bk_strategy, bk_seed, bk_gateway,
                                bk_max_bins, bk_monotonic);
        if (rules->parsed()) return cmd_rules(r_kb, r_target, r_grade);
        if (facts->parsed()) return cmd_facts(f_kb, f_histories, f_catalog, f_user);
        if (retrieve->parsed())
            return cmd_retrieve(rt_kb, rt_histories, rt_catalog, rt_user, rt_target, rt_flags);
        if (predict->parsed())
            return cmd_predict(p_kb, p_histories, p_catalog, p_user, p_target, p_flags, p_gateway);
        if (gen->parsed())
            return cmd_gen_instruct(*gen, g_kb, g_histories, g_catalog, g_target, g_mode, g_out,
                                    g_split, g_gateway);
        if (eval->parsed())
            return cmd_eval(*eval, e_kb, e_histories, e_catalog, e_target, e_flags, e_gateway,
                            e_report);
        std::cerr << "error: usage: no subcommand given\n";
        return kExitUsage;
    } catch (const MissingInputError& e) {
        std::cerr << "error: missing-input: " << e.what() << "\n";
        return kExitMissingInput;
    } catch (const txnkb::SchemaError& e) {
        std::cerr << "error: schema: " << e.what() << "\n";
        return kExitData;
    } catch (const txnkb::DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitData;
    } catch (const txnkb::VersionError& e) {
        std::cerr << "error: version: " << e.what() << "\n";
        return kExitData;
    } catch (const txnkb::ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const txnkb::TransportError& e) {
        std::cerr << "error: transport: " << e.what() << "\n";
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return kExitInternal;
    }
}
