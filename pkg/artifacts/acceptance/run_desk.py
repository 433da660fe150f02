from spheregen.training import TrainConfig, model_config_for, train

tcfg = TrainConfig(steps=2000, seed=0, checkpoint_every=250, log_every=25)
mcfg = model_config_for(tcfg)
ckpt = train('artifacts/acceptance/corpus600', mcfg, tcfg,
             'artifacts/acceptance/desk_run', quiet=True)
print('done', ckpt)
