#include <unistd.h>
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "dclsnet/checkpoint.hpp"
#include "dclsnet/model.hpp"
#include "dclsnet/verify.hpp"

using namespace dclsnet;

namespace {

std::size_t depthwise_ledger(const Model& m) {
    std::size_t n = 0;
    for (const auto& [name, numel] : m.param_breakdown()) {
        const bool dw = name.find(".dw.weight") != std::string::npos ||
                        name.find(".dw.w") != std::string::npos;
        const bool shared = name.rfind("dcls.", 0) == 0;
        if (dw || shared) n += numel;
    }
    return n;
}

std::string temp_path(const char* stem) {
    return std::string("/tmp/dclsnet_test_") + stem + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("convnext-t audio parameter count is 28.6M within 2%") {
    std::mt19937 rng(0);
    auto model = build_model<float>(ModelSpec::convnext_t_audio(), rng);
    const double count = (double)model.count_params();
    CHECK(count >= 28.6e6 * 0.98);
    CHECK(count <= 28.6e6 * 1.02);
}

TEST_CASE("surgery lowers the parameter count on convnext-t") {
    std::mt19937 rng(0);
    auto model = build_model<float>(ModelSpec::convnext_t_audio(), rng);
    const std::size_t before = model.count_params();
    auto rep = surgery_replace_dsc_with_dcls(model, 23, 26, DclsVersion::Gauss, rng);
    CHECK(model.count_params() <= before);
    CHECK(rep.params_before == before);
    CHECK(rep.params_after == model.count_params());
}

TEST_CASE("convnext-t surgery: 18 replacements, 4 shared groups, exact dw ledger") {
    std::mt19937 rng(1);
    auto model = build_model<float>(ModelSpec::convnext_t_audio(), rng);
    CHECK(depthwise_ledger(model) == 49u * (3 * 96 + 3 * 192 + 9 * 384 + 3 * 768));
    CHECK(depthwise_ledger(model) == 324576u);

    auto rep = surgery_replace_dsc_with_dcls(model, 23, 26, DclsVersion::Gauss, rng);
    CHECK(rep.replaced == 18);
    CHECK(rep.shared_groups == 4);
    CHECK(depthwise_ledger(model) == 26u * 6624 + 4u * 26 * (96 + 192 + 384 + 768));
    CHECK(depthwise_ledger(model) == 321984u);
}

TEST_CASE("toy parameter ledger matches hand-summed arithmetic") {
    std::mt19937 rng(2);
    auto model = build_model<float>(ModelSpec::toy(4), rng);
    const std::size_t stem = 8 * 1 * 2 * 16 + 8 + 8 + 8;
    const std::size_t block8 = 8 * 49 + 8 + (8 + 8) + (32 * 8 + 32) + (8 * 32 + 8) + 8;
    const std::size_t down = (8 + 8) + 16 * 8 * 2 * 2 + 16;
    const std::size_t block16 = 16 * 49 + 16 + (16 + 16) + (64 * 16 + 64) + (16 * 64 + 16) + 16;
    const std::size_t head = (16 + 16) + 4 * 16 + 4;
    CHECK(model.count_params() == stem + block8 + down + block16 + head);
}

TEST_CASE("single-layer parameter arithmetic: dsc7 vs unshared dcls-gauss") {
    ModelSpec spec;
    spec.stages = {{1, 96, 7, ConvMethod::Dsc}};
    spec.num_classes = 4;
    std::mt19937 rng(3);
    auto dsc = build_model<float>(spec, rng);
    std::size_t dw = 0;
    for (const auto& [name, numel] : dsc.param_breakdown())
        if (name.find(".dw.") != std::string::npos) dw += numel;
    CHECK(dw == 96u * 49 + 96);  // 4800

    spec.stages[0].method = ConvMethod::Dcls;
    auto dcls = build_model<float>(spec, rng);
    std::size_t dcls_dw = 0;
    for (const auto& [name, numel] : dcls.param_breakdown())
        if (name.find(".dw.") != std::string::npos || name.rfind("dcls.", 0) == 0)
            dcls_dw += numel;
    CHECK(dcls_dw == 96u * 26 + 2u * 96 * 26 + 2u * 96 * 26 + 96);  // 12576
}

TEST_CASE("dcls/dsc7 depthwise breakeven sits between depth 4 and depth 5") {
    // per channel: 49 d  vs  26 d + 104
    for (int depth : {4, 5}) {
        ModelSpec spec;
        spec.stages = {{depth, 8, 7, ConvMethod::Dsc}};
        spec.num_classes = 2;
        std::mt19937 rng(4);
        auto dsc = build_model<float>(spec, rng);
        const std::size_t base = depthwise_ledger(dsc);
        surgery_replace_dsc_with_dcls(dsc, 23, 26, DclsVersion::Gauss, rng);
        const std::size_t after = depthwise_ledger(dsc);
        if (depth >= 5)
            CHECK(after < base);
        else
            CHECK(after > base);
    }
}

TEST_CASE("sharing follows channel counts in traversal order") {
    ModelSpec spec;
    spec.stages = {{2, 96, 7, ConvMethod::Dsc}, {1, 192, 7, ConvMethod::Dsc}};
    spec.num_classes = 4;
    std::mt19937 rng(5);
    auto model = build_model<float>(spec, rng);
    auto rep = surgery_replace_dsc_with_dcls(model, 7, 4, DclsVersion::Gauss, rng);
    CHECK(rep.replaced == 3);
    CHECK(rep.shared_groups == 2);
    CHECK(model.stages[0].blocks[0].dcls_P == model.stages[0].blocks[1].dcls_P);
    CHECK(model.stages[0].blocks[0].dcls_SIG == model.stages[0].blocks[1].dcls_SIG);
    CHECK(model.stages[1].blocks[0].dcls_P != model.stages[0].blocks[0].dcls_P);
}

TEST_CASE("surgery skips non-7x7 depthwise sites and preserves everything else") {
    ModelSpec spec;
    spec.stages = {{1, 8, 3, ConvMethod::Dsc}, {1, 16, 7, ConvMethod::Dsc}};
    spec.num_classes = 2;
    std::mt19937 rng(6);
    auto model = build_model<float>(spec, rng);

    std::map<std::string, std::vector<float>> before;
    for (const auto& p : model.params) before[p.name] = p.value.data;

    auto rep = surgery_replace_dsc_with_dcls(model, 7, 4, DclsVersion::Gauss, rng);
    CHECK(rep.replaced == 1);
    CHECK(rep.shared_groups == 1);
    CHECK(model.stages[0].blocks[0].method == ConvMethod::Dsc);
    CHECK(model.stages[1].blocks[0].method == ConvMethod::Dcls);

    // every pre-existing tensor except the replaced dw weight is bitwise intact
    for (const auto& p : model.params) {
        auto it = before.find(p.name);
        if (it == before.end()) continue;  // new dcls params
        CHECK(p.value.data == it->second);
    }
    // the replaced 7x7 weight is deactivated, not mutated
    bool found_inactive = false;
    for (const auto& p : model.params)
        if (!p.active && p.name == "stages.1.blocks.0.dw.weight") {
            found_inactive = true;
            CHECK(p.value.data == before.at(p.name));
        }
    CHECK(found_inactive);
}

TEST_CASE("surgery on a dcls-free model is a no-op") {
    ModelSpec spec;
    spec.stages = {{1, 8, 3, ConvMethod::Dsc}};
    spec.num_classes = 2;
    std::mt19937 rng(7);
    auto model = build_model<float>(spec, rng);
    auto rep = surgery_replace_dsc_with_dcls(model, 23, 26, DclsVersion::Gauss, rng);
    CHECK(rep.replaced == 0);
    CHECK(rep.shared_groups == 0);
    CHECK(rep.params_before == rep.params_after);
}

TEST_CASE("surgery rejects an even dilated size") {
    std::mt19937 rng(8);
    auto model = build_model<float>(ModelSpec::toy(2), rng);
    CHECK_THROWS_WITH(surgery_replace_dsc_with_dcls(model, 22, 26, DclsVersion::Gauss, rng),
                      "dilated kernel size must be odd");
}

TEST_CASE("eval forward is deterministic and spatial size is preserved per block") {
    std::mt19937 rng(9);
    auto model = build_model<float>(ModelSpec::toy(3), rng);
    std::mt19937 r1(0), r2(1);
    Tensor x = random_normal<float>({2, 1, 8, 32}, 0.0f, 1.0f, rng);
    Tensor y1 = model.forward(x, RunMode::Eval, r1);
    Tensor y2 = model.forward(x, RunMode::Eval, r2);
    CHECK(y1.shape == Shape{2, 3});
    CHECK(y1.data == y2.data);

    ForwardCache<float> cache;
    std::mt19937 r3(0);
    model.forward(x, RunMode::Eval, r3, &cache);
    for (const auto& sc : cache.stages)
        for (const auto& bc : sc.blocks)
            CHECK(bc.x.shape == Shape{bc.x.dim(0), bc.x.dim(1), bc.dw_out.dim(1), bc.dw_out.dim(2)});
}

TEST_CASE("drop_path_rate 0 makes train and eval forward agree") {
    std::mt19937 rng(10);
    auto model = build_model<float>(ModelSpec::toy(3), rng);
    Tensor x = random_normal<float>({2, 1, 8, 32}, 0.0f, 1.0f, rng);
    std::mt19937 r1(7), r2(7);
    Tensor tr = model.forward(x, RunMode::Train, r1);
    Tensor ev = model.forward(x, RunMode::Eval, r2);
    CHECK(tr.data == ev.data);
}

TEST_CASE("end-to-end gradcheck on the toy model") {
    CHECK(verify::check_toy_model(ConvMethod::Dsc, DclsVersion::Gauss, 3).max_rel_err < 1e-3);
    CHECK(verify::check_toy_model(ConvMethod::Dcls, DclsVersion::Gauss, 3).max_rel_err < 1e-3);
    CHECK(verify::check_toy_model(ConvMethod::Dcls, DclsVersion::Bilinear, 3).max_rel_err < 1e-3);
}

TEST_CASE("forward rejects wrong input channel counts") {
    std::mt19937 rng(11);
    auto model = build_model<float>(ModelSpec::toy(3), rng);
    Tensor bad({2, 2, 8, 32});
    std::mt19937 r(0);
    CHECK_THROWS(model.forward(bad, RunMode::Eval, r));
}

TEST_CASE("invalid specs are rejected") {
    ModelSpec spec;
    spec.stages = {{1, 16, 7, ConvMethod::Dsc}, {1, 8, 7, ConvMethod::Dsc}};
    CHECK_THROWS(spec.validate());  // non-increasing channels
    spec.stages = {{1, 8, 7, ConvMethod::Dcls}};
    spec.dcls.size = 8;
    CHECK_THROWS_WITH(spec.validate(), "dilated kernel size must be odd");
}

TEST_CASE("spec serialize/parse round trip") {
    ModelSpec spec = ModelSpec::convnext_t_audio(ConvMethod::Dcls);
    spec.drop_path_rate = 0.25f;
    spec.dcls.version = DclsVersion::Bilinear;
    std::map<std::string, std::string> kv;
    std::istringstream is(spec.serialize());
    std::string line;
    while (std::getline(is, line)) {
        const auto colon = line.find(": ");
        kv[line.substr(0, colon)] = line.substr(colon + 2);
    }
    ModelSpec back = ModelSpec::parse(kv);
    CHECK(back.serialize() == spec.serialize());
}

TEST_CASE("checkpoint round trip reproduces forward bitwise") {
    std::mt19937 rng(12);
    auto model = build_model<float>(ModelSpec::toy(3), rng);
    const std::string path = temp_path("ckpt_rt");
    save_checkpoint(model, path);
    Model back = load_checkpoint(path);
    Tensor x = random_normal<float>({1, 1, 8, 32}, 0.0f, 1.0f, rng);
    std::mt19937 r1(0), r2(0);
    CHECK(model.forward(x, RunMode::Eval, r1).data == back.forward(x, RunMode::Eval, r2).data);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint error paths are distinct") {
    std::mt19937 rng(13);
    auto model = build_model<float>(ModelSpec::toy(3), rng);
    const std::string path = temp_path("ckpt_err");
    save_checkpoint(model, path);

    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string full = buf.str();
    in.close();

    SUBCASE("truncated payload") {
        std::ofstream out(path, std::ios::binary);
        out.write(full.data(), (std::streamsize)(full.size() - 64));
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupt checkpoint"),
                             std::runtime_error);
    }
    SUBCASE("bad magic") {
        std::string mangled = full;
        mangled[0] = 'X';
        std::ofstream out(path, std::ios::binary);
        out.write(mangled.data(), (std::streamsize)mangled.size());
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    SUBCASE("version mismatch") {
        std::string mangled = full;
        const std::string key = "meta.format_version: 1";
        mangled.replace(mangled.find(key), key.size(), "meta.format_version: 9");
        std::ofstream out(path, std::ios::binary);
        out.write(mangled.data(), (std::streamsize)mangled.size());
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version mismatch"),
                             std::runtime_error);
    }
    SUBCASE("missing array") {
        std::string mangled = full;
        const std::string needle = "array: head.fc.bias";
        const auto start = mangled.find(needle);
        const auto end = mangled.find('\n', start);
        mangled.erase(start, end - start + 1);
        std::ofstream out(path, std::ios::binary);
        out.write(mangled.data(), (std::streamsize)mangled.size());
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path),
                             doctest::Contains("checkpoint missing array"), std::runtime_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint restores dcls sharing (aliasing probe)") {
    std::mt19937 rng(14);
    ModelSpec spec;
    spec.stages = {{2, 8, 7, ConvMethod::Dcls}, {1, 16, 7, ConvMethod::Dcls}};
    spec.num_classes = 2;
    spec.dcls.size = 7;
    spec.dcls.count = 3;
    auto model = build_model<float>(spec, rng);
    const std::string path = temp_path("ckpt_share");
    save_checkpoint(model, path);
    Model back = load_checkpoint(path);
    auto& b0 = back.stages[0].blocks[0];
    auto& b1 = back.stages[0].blocks[1];
    REQUIRE(b0.dcls_P == b1.dcls_P);
    back.p(b0.dcls_P).value.data[0] = 99.0f;
    CHECK(back.p(b1.dcls_P).value.data[0] == 99.0f);
    std::remove(path.c_str());
}

TEST_CASE("array container round trip") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const std::string path = temp_path("arr");
    save_array_container(path, {{"spec", a}});
    auto back = load_array_container(path);
    REQUIRE(back.size() == 1);
    CHECK(back[0].first == "spec");
    CHECK(back[0].second.shape == a.shape);
    CHECK(back[0].second.data == a.data);
    std::remove(path.c_str());
}
