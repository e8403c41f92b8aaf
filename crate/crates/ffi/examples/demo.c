/* cc demo.c -I../include -L../../../target/release -lpanelfactor_ffi -lm -lpthread -ldl */
#include <math.h>
#include <stdio.h>
#include "panelfactor.h"

#define N 20
#define T 10

int main(void) {
    static double y[N * T], x[N * T], w[N * T];
    for (int r = 0; r < N * T; r++) {
        w[r] = fmod(r * 0.7548776662, 1.0) * 2.0 - 1.0;
        x[r] = 0.5 * w[r] + fmod(r * 0.5698402910, 1.0) - 0.5;
        y[r] = 2.0 * x[r] + sin(3.0 * w[r]) + 0.2 * (fmod(r * 0.3819660113, 1.0) - 0.5);
    }

    PfDataset *ds = NULL;
    PfFit *fit = NULL;
    PfStatus st = pf_dataset_new(N, T, y, x, 1, w, 1, &ds);
    if (st == PF_STATUS_OK)
        st = pf_fit(ds, NULL, 0, NULL, 0, &fit);
    if (st != PF_STATUS_OK) {
        fprintf(stderr, "%s: %s\n", pf_status_name(st), pf_last_error_message());
        pf_dataset_free(ds);
        return 1;
    }

    double beta, se;
    pf_fit_beta(fit, &beta, 1);
    pf_fit_std_errors(fit, &se, 1);
    printf("beta = %.4f (se %.4f)\n", beta, se);

    PfTestResult test;
    if (pf_spec_test(ds, fit, 199, 42, &test) == PF_STATUS_OK)
        printf("Test statistic for our model is %.3f with p-value %.3f\n", test.standardized, test.p_bootstrap);

    pf_fit_free(fit);
    pf_dataset_free(ds);
    return 0;
}
