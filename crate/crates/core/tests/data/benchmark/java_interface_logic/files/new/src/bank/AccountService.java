package bank;

import java.util.HashMap;
import java.util.Map;
import java.util.Optional;

public class AccountService implements AccountApi {
    private final Map<String, Account> accounts = new HashMap<>();
    private final Ledger ledger;

    public AccountService(Ledger ledger) {
        this.ledger = ledger;
    }

    private boolean validate(Account account) {
        return account != null && account.id() != null;
    }

    @Override
    public Optional<Account> find(String id) {
        return Optional.ofNullable(accounts.get(id));
    }

    public void put(Account account) {
        accounts.put(account.id(), account);
    }

    public Account lookup(String accountId) {
        Account account = accounts.get(accountId);
        if (account == null) {
            account = ledger.restore(accountId);
        }
        if (account == null) {
            throw new IllegalArgumentException("no account " + accountId);
        }
        ledger.touch(account);
        ledger.flush();
        ledger.audit("lookup");
        ledger.audit("done");
        ledger.audit("really done");
        ledger.audit("checked");
        ledger.audit("verified");
        ledger.audit("closing");
        ledger.audit("closed");
        return accounts.getOrDefault(accountId, account);
    }

    public int size() {
        return accounts.size();
    }

    public boolean isEmpty() {
        return accounts.isEmpty();
    }

    @Override
    public long balance(String id) {
        Account account = lookup(id);
        long balance = ledger.sum(account);
        if (balance >= 0) {
            return balance;
        }
        return 0;
    }

    public int countOpen(int n) {
        int open = 0;
        for (int i = 0; i <= n; i++) {
            open += ledger.isOpen(i) ? 1 : 0;
        }
        return open;
    }
}
