#include <doctest.h>

#include <cmath>

#include "ssmll/metrics.hpp"
#include "ssmll/oracle.hpp"
#include "ssmll/rng.hpp"

using namespace ssmll;

namespace {

DenseMatrix column(std::initializer_list<double> vals) {
    DenseMatrix m(vals.size(), 1);
    std::size_t i = 0;
    for (double v : vals) m(i++, 0) = v;
    return m;
}

}  // namespace

TEST_CASE("confusion_counts hand example, identity, all-negative") {
    const DenseMatrix pred = column({1, 0, 1, 1});
    const DenseMatrix truth = column({1, 1, 0, 1});
    const auto counts = confusion_counts(pred, truth);
    CHECK(counts[0].tp == 2);
    CHECK(counts[0].fp == 1);
    CHECK(counts[0].fn == 1);
    CHECK(counts[0].tn == 0);
    CHECK(counts[0].total() == 4);

    const auto same = confusion_counts(truth, truth);
    CHECK(same[0].fp == 0);
    CHECK(same[0].fn == 0);

    const DenseMatrix zeros = column({0, 0, 0, 0});
    const auto z = confusion_counts(zeros, zeros);
    CHECK(z[0].tn == 4);
    CHECK(z[0].tp == 0);

    DenseMatrix nonbin = column({0.5, 0, 0, 0});
    CHECK_THROWS_AS(confusion_counts(nonbin, truth), data_error);
}

TEST_CASE("class_metric worked values and conventions") {
    ConfusionCounts perfect{2, 0, 0, 0};
    CHECK(class_metric(perfect, precision_metric()) == 1.0);
    CHECK(class_metric(perfect, recall_metric()) == 1.0);
    CHECK(class_metric(perfect, fbeta_metric(0.5)) == 1.0);
    CHECK(class_metric(perfect, fbeta_metric(7.0)) == 1.0);

    ConfusionCounts zero_tp{0, 3, 0, 2};
    CHECK(class_metric(zero_tp, precision_metric()) == 0.0);
    CHECK(class_metric(zero_tp, recall_metric()) == 0.0);
    CHECK(class_metric(zero_tp, fbeta_metric(0.5)) == 0.0);

    ConfusionCounts c{2, 1, 0, 1};
    CHECK(class_metric(c, fbeta_metric(0.5)) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    // P = 2/3, R = 1 gives F_0.5 = 5/7
    const double f = fbeta_of(2.0 / 3.0, 1.0, 0.5, FBetaDenom::beta_squared);
    CHECK(f == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
    CHECK(f == doctest::Approx(0.714286).epsilon(1e-5));
}

TEST_CASE("fbeta limits and harmonic mean at beta = 1") {
    const double p = 0.3, r = 0.8;
    CHECK(std::abs(fbeta_of(p, r, 1e-3, FBetaDenom::beta_squared) - p) < 1e-3);
    CHECK(std::abs(fbeta_of(p, r, 1e3, FBetaDenom::beta_squared) - r) < 1e-3);
    const double f1 = fbeta_of(p, r, 1.0, FBetaDenom::beta_squared);
    CHECK(f1 == doctest::Approx(2.0 * p * r / (p + r)).epsilon(1e-12));
    // the alternate denominator convention differs whenever beta != 1
    CHECK(fbeta_of(p, r, 0.5, FBetaDenom::beta_linear) !=
          fbeta_of(p, r, 0.5, FBetaDenom::beta_squared));
}

TEST_CASE("average_precision worked values") {
    const std::vector<double> scores{0.9, 0.8, 0.7};
    const std::vector<double> labels{1, 0, 1};
    CHECK(average_precision(scores, labels) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

    const std::vector<double> sep_s{0.9, 0.8, 0.3, 0.2};
    const std::vector<double> sep_y{1, 1, 0, 0};
    CHECK(average_precision(sep_s, sep_y) == 1.0);

    // single positive ranked last among n
    const std::vector<double> last_s{0.9, 0.8, 0.7, 0.6, 0.1};
    const std::vector<double> last_y{0, 0, 0, 0, 1};
    CHECK(average_precision(last_s, last_y) == doctest::Approx(1.0 / 5.0).epsilon(1e-15));

    CHECK(average_precision(std::vector<double>{0.4, 0.2}, std::vector<double>{0, 0}) == 0.0);
}

TEST_CASE("average_precision invariant under monotone score transforms") {
    Rng rng(23);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> s(30), y(30), warped(30);
        for (int i = 0; i < 30; ++i) {
            s[i] = rng.uniform01();
            y[i] = rng.uniform01() < 0.4 ? 1.0 : 0.0;
            warped[i] = std::tanh(3.0 * s[i]) * 0.5 + 0.5;  // strictly increasing
        }
        if (std::none_of(y.begin(), y.end(), [](double v) { return v != 0.0; })) y[0] = 1.0;
        CHECK(average_precision(s, y) == average_precision(warped, y));
    }
}

TEST_CASE("mean_average_precision mean, perfect, and no-positive error") {
    DenseMatrix scores(4, 2), labels(4, 2);
    // class 0 perfectly ranked, class 1 = the 5/6 fixture padded with a negative
    const double s0[] = {0.9, 0.8, 0.2, 0.1}, y0[] = {1, 1, 0, 0};
    const double s1[] = {0.9, 0.8, 0.7, 0.1}, y1[] = {1, 0, 1, 0};
    for (int i = 0; i < 4; ++i) {
        scores(i, 0) = s0[i];
        labels(i, 0) = y0[i];
        scores(i, 1) = s1[i];
        labels(i, 1) = y1[i];
    }
    const MapResult r = mean_average_precision(scores, labels);
    CHECK(r.map == doctest::Approx(0.5 * (1.0 + 5.0 / 6.0)).epsilon(1e-12));
    CHECK(r.skipped_classes.empty());

    // every class perfectly ranked -> exactly 1
    DenseMatrix ps(4, 2), py(4, 2);
    for (int i = 0; i < 4; ++i)
        for (int k = 0; k < 2; ++k) {
            ps(i, k) = 0.9 - 0.2 * i;
            py(i, k) = i < 2 ? 1.0 : 0.0;
        }
    CHECK(mean_average_precision(ps, py).map == 1.0);

    DenseMatrix no_pos(4, 1, 0.0);
    DenseMatrix sc(4, 1, 0.5);
    CHECK_THROWS_AS(mean_average_precision(sc, no_pos), data_error);
}

TEST_CASE("cf1_of1 fixtures") {
    // pred == truth -> all six are 1
    DenseMatrix t(3, 2);
    t(0, 0) = 1;
    t(1, 1) = 1;
    t(2, 0) = 1;
    const PrF1Summary all = cf1_of1(t, t);
    CHECK(all.cf1 == 1.0);
    CHECK(all.of1 == 1.0);
    CHECK(all.class_precision == 1.0);
    CHECK(all.overall_recall == 1.0);

    // two-class worked case: class0 tp=1 fp=1 fn=0, class1 tp=1 fp=0 fn=1
    DenseMatrix pred(3, 2, 0.0), truth(3, 2, 0.0);
    pred(0, 0) = 1;
    truth(0, 0) = 1;  // class0 tp
    pred(1, 0) = 1;   // class0 fp
    pred(2, 1) = 1;
    truth(2, 1) = 1;  // class1 tp
    truth(1, 1) = 1;  // class1 fn
    const PrF1Summary s = cf1_of1(pred, truth);
    CHECK(s.class_precision == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(s.class_recall == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(s.cf1 == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(s.overall_precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s.overall_recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s.of1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("cf1_of1 with one class equals binary f1") {
    const DenseMatrix pred = column({1, 0, 1, 1});
    const DenseMatrix truth = column({1, 1, 0, 1});
    const PrF1Summary s = cf1_of1(pred, truth);
    const auto c = confusion_counts(pred, truth)[0];
    const double f1 = fbeta_of(precision_of(c), recall_of(c), 1.0, FBetaDenom::beta_squared);
    CHECK(s.cf1 == doctest::Approx(f1).epsilon(1e-15));
    CHECK(s.of1 == doctest::Approx(f1).epsilon(1e-15));
}

TEST_CASE("confusion totals partition the instance count") {
    Rng rng(31);
    DenseMatrix pred(50, 6), truth(50, 6);
    for (auto& v : pred.data) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
    for (auto& v : truth.data) v = rng.uniform01() < 0.3 ? 1.0 : 0.0;
    for (const auto& c : confusion_counts(pred, truth)) CHECK(c.total() == 50);
}

TEST_CASE("metrics agree with the naive oracle bitwise on random instances") {
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 5 + rng.uniform_below(196);
        const std::size_t k = 1 + rng.uniform_below(10);
        DenseMatrix scores(n, k), truth(n, k);
        for (auto& v : scores.data) v = rng.uniform01();
        for (auto& v : truth.data) v = rng.uniform01() < 0.35 ? 1.0 : 0.0;
        // ensure at least one positive somewhere
        truth(0, 0) = 1.0;
        const LabelMatrix pred = binarize(scores, 0.5);

        const MapResult mr = mean_average_precision(scores, truth);
        const PrF1Summary s = cf1_of1(pred, truth);
        const auto ref = oracle::naive_metrics(scores, pred, truth, 0.5);
        CHECK(mr.map == ref.map);
        CHECK(s.cf1 == ref.cf1);
        CHECK(s.of1 == ref.of1);
        CHECK(s.class_precision == ref.cp);
        CHECK(s.class_recall == ref.cr);
        CHECK(s.overall_precision == ref.op);
        CHECK(s.overall_recall == ref.orr);
        CHECK(mr.skipped_classes == ref.skipped_classes);

        const auto counts = confusion_counts(pred, truth);
        for (std::size_t kk = 0; kk < k; ++kk) {
            CHECK(precision_of(counts[kk]) == ref.per_class_precision[kk]);
            CHECK(recall_of(counts[kk]) == ref.per_class_recall[kk]);
            CHECK(class_metric(counts[kk], fbeta_metric(0.5)) == ref.per_class_fbeta[kk]);
        }
    }
}
