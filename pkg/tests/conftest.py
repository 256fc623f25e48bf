def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: full 50-replication simulation studies (minutes each)"
    )
