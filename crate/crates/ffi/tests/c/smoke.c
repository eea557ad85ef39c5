#include <math.h>
#include <stdio.h>
#include "rsb.h"

int main(void) {
    RsbModel *model = NULL;
    if (rsb_model_new_sk(0.0, 1.0, 1.0, &model) != RSB_STATUS_OK) return 10;
    double qs[1] = {0.3};
    double p = 0.0;
    if (rsb_pressure(model, 0, 0.2, qs, NULL, &p) != RSB_STATUS_OK) return 11;
    if (fabs(p - log(2.0)) > 1e-12) return 12;

    RsbModel *bad = NULL;
    if (rsb_model_new_sk(-1.0, 0.0, 1.0, &bad) != RSB_STATUS_INVALID_PARAMETER) return 13;
    char msg[256];
    if (rsb_last_error_message(msg, sizeof msg) == 0) return 14;

    RsbSolution *sol = NULL;
    if (rsb_solve(model, 0, NULL, &sol) != RSB_STATUS_OK) return 15;
    size_t n = 0;
    rsb_solution_count(sol, &n);
    if (n == 0) return 16;
    double m, q[1], pressure, residual;
    if (rsb_solution_branch(sol, 0, &m, q, &pressure, &residual) != RSB_STATUS_OK) return 17;
    if (fabs(pressure - log(2.0)) > 1e-12) return 18;
    rsb_solution_free(sol);
    rsb_model_free(model);
    printf("ok %s\n", rsb_version());
    return 0;
}
