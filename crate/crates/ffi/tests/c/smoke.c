#include <math.h>
#include <stdio.h>
#include "fieldmap.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        FmStatus s_ = (call);                                              \
        if (s_ != FM_STATUS_OK) {                                          \
            const char *m_ = fm_last_error();                              \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, m_ ? m_ : "");    \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    double xs[] = {0.0, 0.0, 1.0, 0.5};
    double ys[] = {0.3, -0.2};
    double noise[] = {0.01, 0.01};
    FmGp *gp = NULL;
    CHECK(fm_gp_fit(1.0, 1.0, 2, xs, ys, noise, 2, &gp));
    double x[] = {0.5, 0.25};
    double mean = 0.0, var = 0.0;
    CHECK(fm_gp_predict(gp, x, 2, &mean, &var));
    fm_gp_free(gp);
    if (!(var > 0.0 && var < 1.0)) return 2;

    unsigned char buf[64];
    size_t written = 0;
    double loc[] = {1.5, -2.0};
    CHECK(fm_packet_encode(3, 7, loc, 2, 0.25, 0.5, buf, sizeof buf, &written));
    if (written != fm_packet_encoded_len(2) || written != 44) return 3;
    uint32_t sender = 0, step = 0;
    double back[2];
    size_t dim = 0;
    double m = 0.0, v = 0.0;
    CHECK(fm_packet_decode(buf, written, &sender, &step, back, 2, &dim, &m, &v));
    if (sender != 3 || step != 7 || dim != 2 || back[1] != -2.0 || m != 0.25 || v != 0.5) return 4;

    if (fm_packet_decode(buf, 10, &sender, &step, back, 2, &dim, &m, &v) != FM_STATUS_MALFORMED_PACKET) return 5;
    if (fm_last_error() == NULL) return 6;

    FmConfig *cfg = NULL;
    CHECK(fm_config_preset("paper_sec6", &cfg));
    CHECK(fm_config_set_steps(cfg, 2));
    FmRun *run = NULL;
    CHECK(fm_run_scenario(cfg, &run));
    size_t steps = 0;
    CHECK(fm_run_step_count(run, &steps));
    if (steps != 2) return 7;
    FmNetworkMetrics nm;
    CHECK(fm_run_metrics(run, 1, 0, &nm));
    if (!(nm.local_rmse > 0.0) || isnan(nm.overlap_rmse)) return 8;
    fm_run_free(run);
    fm_config_free(cfg);
    printf("ok\n");
    return 0;
}
